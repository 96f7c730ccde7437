#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cmaseg/common.hpp"

namespace cmaseg {

// Closed vocabulary over whitespace-split, lowercased tokens. Ids are dense
// line numbers; <pad> and <unk> are ordinary entries that every vocabulary
// must contain.
class Vocabulary {
public:
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kUnk = "<unk>";

    explicit Vocabulary(std::vector<std::string> tokens);
    static Vocabulary load(const std::string& path);   // one token per line
    void save(const std::string& path) const;

    size_t size() const { return tokens_.size(); }
    int pad_id() const { return pad_id_; }
    int unk_id() const { return unk_id_; }

    int id_of(const std::string& token) const;          // unk id if unknown
    const std::string& token_of(int id) const;
    std::vector<int> encode(const std::string& text, size_t max_len) const;

    static std::vector<std::string> split_lower(const std::string& text);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int pad_id_ = -1, unk_id_ = -1;
};

}  // namespace cmaseg

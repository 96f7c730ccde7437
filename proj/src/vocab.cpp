#include "cmaseg/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace cmaseg {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
            fail(ErrorCode::config, "vocabulary has duplicate token '" + tokens_[i] + "'");
    }
    auto pad = ids_.find(kPad);
    auto unk = ids_.find(kUnk);
    if (pad == ids_.end() || unk == ids_.end())
        fail(ErrorCode::config, "vocabulary must contain <pad> and <unk>");
    pad_id_ = pad->second;
    unk_id_ = unk->second;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::io, "cannot open vocabulary: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open vocabulary for writing: " + path);
    for (const auto& t : tokens_) os << t << "\n";
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id_ : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
        fail(ErrorCode::input, "vocabulary id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<std::string> Vocabulary::split_lower(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        out.push_back(tok);
    }
    return out;
}

std::vector<int> Vocabulary::encode(const std::string& text, size_t max_len) const {
    auto words = split_lower(text);
    if (words.empty()) fail(ErrorCode::input, "empty expression");
    if (words.size() > max_len)
        fail(ErrorCode::input, "expression has " + std::to_string(words.size()) +
                                   " words, limit is " + std::to_string(max_len));
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id_of(w));
    return ids;
}

}  // namespace cmaseg

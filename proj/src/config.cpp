#include "cmaseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cmaseg {

namespace {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        fail(ErrorCode::config, "config key '" + key + "': expected unsigned integer, got '" + v + "'");
    return out;
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        fail(ErrorCode::config, "config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    fail(ErrorCode::config, "config key '" + key + "': expected boolean, got '" + v + "'");
}

std::string fmt_f64(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        auto size_field = [&f](const std::string& key, size_t RunConfig::*member) {
            f[key] = {[key, member](RunConfig& c, const std::string& v) {
                          c.*member = static_cast<size_t>(parse_u64(key, v));
                      },
                      [member](const RunConfig& c) { return std::to_string(c.*member); }};
        };
        auto f64_field = [&f](const std::string& key, double RunConfig::*member) {
            f[key] = {[key, member](RunConfig& c, const std::string& v) {
                          c.*member = parse_f64(key, v);
                      },
                      [member](const RunConfig& c) { return fmt_f64(c.*member); }};
        };
        auto bool_field = [&f](const std::string& key, bool RunConfig::*member) {
            f[key] = {[key, member](RunConfig& c, const std::string& v) {
                          c.*member = parse_bool(key, v);
                      },
                      [member](const RunConfig& c) { return c.*member ? "1" : "0"; }};
        };
        size_field("d_model", &RunConfig::d_model);
        size_field("n_heads", &RunConfig::n_heads);
        size_field("d_text", &RunConfig::d_text);
        size_field("text_heads", &RunConfig::text_heads);
        size_field("enc_base_width", &RunConfig::enc_base_width);
        size_field("enc_layers", &RunConfig::enc_layers);
        size_field("dec_layers", &RunConfig::dec_layers);
        size_field("ffn_mult", &RunConfig::ffn_mult);
        size_field("n_slots", &RunConfig::n_slots);
        size_field("seg_channels", &RunConfig::seg_channels);
        f64_field("dropout", &RunConfig::dropout);
        size_field("k_shot", &RunConfig::k_shot);
        size_field("n_query", &RunConfig::n_query);
        size_field("max_text_len", &RunConfig::max_text_len);
        size_field("holdout_per_class", &RunConfig::holdout_per_class);
        f64_field("lambda_cls", &RunConfig::lambda_cls);
        f64_field("lambda_kernel", &RunConfig::lambda_kernel);
        f64_field("focal_alpha", &RunConfig::focal_alpha);
        f64_field("focal_gamma", &RunConfig::focal_gamma);
        f64_field("dice_eps", &RunConfig::dice_eps);
        f64_field("lr", &RunConfig::lr);
        f64_field("weight_decay", &RunConfig::weight_decay);
        f64_field("beta1", &RunConfig::beta1);
        f64_field("beta2", &RunConfig::beta2);
        f64_field("adam_eps", &RunConfig::adam_eps);
        f64_field("clip_norm", &RunConfig::clip_norm);
        size_field("steps", &RunConfig::steps);
        f["seed"] = {[](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }};
        bool_field("freeze_encoders", &RunConfig::freeze_encoders);
        bool_field("mask_support", &RunConfig::mask_support);
        bool_field("plain_affinity", &RunConfig::plain_affinity);
        bool_field("self_affinity", &RunConfig::self_affinity);
        bool_field("cross_affinity", &RunConfig::cross_affinity);
        size_field("resize_short", &RunConfig::resize_short);
        size_field("resize_long", &RunConfig::resize_long);
        size_field("eval_episodes", &RunConfig::eval_episodes);
        size_field("eval_runs", &RunConfig::eval_runs);
        bool_field("per_frame_select", &RunConfig::per_frame_select);
        size_field("f_tolerance", &RunConfig::f_tolerance);
        f["eval_upsample"] = {
            [](RunConfig& c, const std::string& v) {
                if (v != "nearest" && v != "bilinear")
                    fail(ErrorCode::config, "eval_upsample must be 'nearest' or 'bilinear'");
                c.eval_upsample = v;
            },
            [](const RunConfig& c) { return c.eval_upsample; }};
        f["vocab"] = {[](RunConfig& c, const std::string& v) { c.vocab = v; },
                      [](const RunConfig& c) { return c.vocab; }};
        return f;
    }();
    return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) fail(ErrorCode::config, "unknown config key '" + key + "'");
    it->second.set(*this, value);
}

void RunConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
        fail(ErrorCode::config, "d_model must be a positive multiple of n_heads");
    if (d_text == 0 || text_heads == 0 || d_text % text_heads != 0)
        fail(ErrorCode::config, "d_text must be a positive multiple of text_heads");
    if (dropout != 0.0)
        fail(ErrorCode::config, "dropout is fixed at 0 in this build");
    if (k_shot == 0 || n_query == 0 || n_slots == 0)
        fail(ErrorCode::config, "k_shot, n_query and n_slots must be >= 1");
    if (enc_layers == 0 || dec_layers == 0 || ffn_mult == 0)
        fail(ErrorCode::config, "enc_layers, dec_layers and ffn_mult must be >= 1");
    if (lambda_cls < 0 || lambda_kernel < 0 || focal_alpha < 0 || focal_gamma < 0 || dice_eps < 0)
        fail(ErrorCode::config, "loss weights must be non-negative");
    if (lr <= 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0)
        fail(ErrorCode::config, "invalid optimizer settings");
    if (seg_channels == 0) fail(ErrorCode::config, "seg_channels must be >= 1");
    if (enc_base_width == 0) fail(ErrorCode::config, "enc_base_width must be >= 1");
    if (max_text_len == 0) fail(ErrorCode::config, "max_text_len must be >= 1");
    if (resize_short == 0 || resize_long == 0 || resize_long < resize_short)
        fail(ErrorCode::config, "resize bounds must satisfy 0 < short <= long");
    if (eval_runs == 0 || eval_episodes == 0)
        fail(ErrorCode::config, "eval_runs and eval_episodes must be >= 1");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::io, "cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::config, path + ":" + std::to_string(lineno) + ": expected key=value");
        auto strip = [](std::string s) {
            const auto sb = s.find_first_not_of(" \t");
            if (sb == std::string::npos) return std::string();
            const auto se = s.find_last_not_of(" \t");
            return s.substr(sb, se - sb + 1);
        };
        cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::apply_overrides(const std::vector<std::string>& key_values) {
    for (const auto& kv : key_values) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::config, "override '" + kv + "' is not key=value");
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

std::string RunConfig::describe() const {
    std::ostringstream os;
    for (const auto& [key, field] : fields()) os << key << "=" << field.get(*this) << "\n";
    return os.str();
}

}  // namespace cmaseg

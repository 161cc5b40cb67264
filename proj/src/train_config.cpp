#include "train_config.hpp"

#include "errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dmcodec {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
    return out;
}

std::string fmt_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

std::string fmt_list(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

} // namespace

int TrainConfig::crop_samples() const { return static_cast<int>(std::llround(crop_seconds * codec.sample_rate)); }

void TrainConfig::validate() const {
    codec.validate();
    disc.validate();
    distill.validate();
    weights.validate();
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (crop_seconds <= 0.0) throw ConfigError("train.crop_seconds must be positive");
    const double exact = crop_seconds * codec.sample_rate;
    if (std::abs(exact - std::round(exact)) > 1e-9 || crop_samples() % codec.hop() != 0) {
        throw ConfigError("crop of " + fmt_double(crop_seconds) + " s is not a whole number of " +
                          std::to_string(codec.hop()) + "-sample frames");
    }
    if (crop_samples() < disc.min_length()) throw ConfigError("crop is shorter than the largest discriminator window");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay must be in (0, 1]");
    if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (n_active_layers < 0 || n_active_layers > codec.n_quantizers) {
        throw ConfigError("train.n_active_layers must be in [0, " + std::to_string(codec.n_quantizers) + "]");
    }
    if (!(rvq_decay > 0.0 && rvq_decay < 1.0)) throw ConfigError("rvq.decay must be in (0, 1)");
    if (rvq_dead_threshold < 0.0) throw ConfigError("rvq.dead_threshold must be >= 0");
}

void TrainConfig::set(const std::string& key_in, const std::string& value_in) {
    const std::string key = trim(key_in);
    const std::string v = trim(value_in);
    auto i = [&] { return static_cast<int>(to_int(key, v)); };
    auto d = [&] { return to_double(key, v); };
    if (key == "codec.base_channels") codec.base_channels = i();
    else if (key == "codec.n_blocks") codec.n_blocks = i();
    else if (key == "codec.strides") codec.strides = to_int_list(key, v);
    else if (key == "codec.latent_dim") codec.latent_dim = i();
    else if (key == "codec.sample_rate") codec.sample_rate = i();
    else if (key == "codec.codebook_size") codec.codebook_size = i();
    else if (key == "codec.n_quantizers") codec.n_quantizers = i();
    else if (key == "codec.lstm_layers") codec.lstm_layers = i();
    else if (key == "codec.seed") codec.seed = static_cast<uint64_t>(to_int(key, v));
    else if (key == "disc.periods") disc.periods = to_int_list(key, v);
    else if (key == "disc.msd_scales") disc.msd_scales = i();
    else if (key == "disc.stft_windows") disc.stft_windows = to_int_list(key, v);
    else if (key == "disc.stft_channels") disc.stft_channels = i();
    else if (key == "disc.seed") disc.seed = static_cast<uint64_t>(to_int(key, v));
    else if (key == "distill.lm") distill.lm_enabled = to_bool(key, v);
    else if (key == "distill.sm") distill.sm_enabled = to_bool(key, v);
    else if (key == "distill.lm_modality") distill.lm_modality = parse_modality(v);
    else if (key == "distill.layer_policy") distill.layer_policy = parse_layer_policy(v);
    else if (key == "distill.lm_rvq") distill.lm_selection = parse_rvq_selection(v);
    else if (key == "distill.sm_rvq") distill.sm_selection = parse_rvq_selection(v);
    else if (key == "distill.axis") distill.axis = parse_axis(v);
    else if (key == "distill.w_lm") distill.w_lm = d();
    else if (key == "distill.w_sm") distill.w_sm = d();
    else if (key == "distill.teacher_dim") distill.teacher_dim = i();
    else if (key == "loss.scale") {
        loss_scale = d();
        weights = LossWeights::from_scale(loss_scale);
    } else if (key == "loss.lambda_distill") weights.distill = d();
    else if (key == "loss.lambda_t") weights.t = d();
    else if (key == "loss.lambda_f") weights.f = d();
    else if (key == "loss.lambda_g") weights.g = d();
    else if (key == "loss.lambda_fm") weights.fm = d();
    else if (key == "loss.lambda_w") weights.w = d();
    else if (key == "train.epochs") epochs = i();
    else if (key == "train.batch_size") batch_size = i();
    else if (key == "train.crop_seconds") crop_seconds = d();
    else if (key == "train.learning_rate") learning_rate = d();
    else if (key == "train.lr_decay") lr_decay = d();
    else if (key == "train.seed") seed = static_cast<uint64_t>(to_int(key, v));
    else if (key == "train.grad_clip") grad_clip = d();
    else if (key == "train.max_steps") max_steps = to_int(key, v);
    else if (key == "train.n_active_layers") n_active_layers = i();
    else if (key == "train.teacher_mode") {
        if (v == "synthetic") teacher_mode = TeacherMode::synthetic;
        else if (v == "cached") teacher_mode = TeacherMode::cached;
        else throw ConfigError("train.teacher_mode must be synthetic or cached");
    } else if (key == "train.teacher_seed") teacher_seed = static_cast<uint64_t>(to_int(key, v));
    else if (key == "rvq.decay") rvq_decay = d();
    else if (key == "rvq.dead_threshold") rvq_dead_threshold = d();
    else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> m;
    m["codec.base_channels"] = std::to_string(codec.base_channels);
    m["codec.n_blocks"] = std::to_string(codec.n_blocks);
    m["codec.strides"] = fmt_list(codec.strides);
    m["codec.latent_dim"] = std::to_string(codec.latent_dim);
    m["codec.sample_rate"] = std::to_string(codec.sample_rate);
    m["codec.codebook_size"] = std::to_string(codec.codebook_size);
    m["codec.n_quantizers"] = std::to_string(codec.n_quantizers);
    m["codec.lstm_layers"] = std::to_string(codec.lstm_layers);
    m["codec.seed"] = std::to_string(codec.seed);
    m["disc.periods"] = fmt_list(disc.periods);
    m["disc.msd_scales"] = std::to_string(disc.msd_scales);
    m["disc.stft_windows"] = fmt_list(disc.stft_windows);
    m["disc.stft_channels"] = std::to_string(disc.stft_channels);
    m["disc.seed"] = std::to_string(disc.seed);
    m["distill.lm"] = distill.lm_enabled ? "true" : "false";
    m["distill.sm"] = distill.sm_enabled ? "true" : "false";
    m["distill.lm_modality"] = to_string(distill.lm_modality);
    m["distill.layer_policy"] = to_string(distill.layer_policy);
    m["distill.lm_rvq"] = to_string(distill.lm_selection);
    m["distill.sm_rvq"] = to_string(distill.sm_selection);
    m["distill.axis"] = to_string(distill.axis);
    m["distill.w_lm"] = fmt_double(distill.w_lm);
    m["distill.w_sm"] = fmt_double(distill.w_sm);
    m["distill.teacher_dim"] = std::to_string(distill.teacher_dim);
    m["loss.scale"] = fmt_double(loss_scale);
    m["loss.lambda_distill"] = fmt_double(weights.distill);
    m["loss.lambda_t"] = fmt_double(weights.t);
    m["loss.lambda_f"] = fmt_double(weights.f);
    m["loss.lambda_g"] = fmt_double(weights.g);
    m["loss.lambda_fm"] = fmt_double(weights.fm);
    m["loss.lambda_w"] = fmt_double(weights.w);
    m["train.epochs"] = std::to_string(epochs);
    m["train.batch_size"] = std::to_string(batch_size);
    m["train.crop_seconds"] = fmt_double(crop_seconds);
    m["train.learning_rate"] = fmt_double(learning_rate);
    m["train.lr_decay"] = fmt_double(lr_decay);
    m["train.seed"] = std::to_string(seed);
    m["train.grad_clip"] = fmt_double(grad_clip);
    m["train.max_steps"] = std::to_string(max_steps);
    m["train.n_active_layers"] = std::to_string(n_active_layers);
    m["train.teacher_mode"] = teacher_mode == TeacherMode::synthetic ? "synthetic" : "cached";
    m["train.teacher_seed"] = std::to_string(teacher_seed);
    m["rvq.decay"] = fmt_double(rvq_decay);
    m["rvq.dead_threshold"] = fmt_double(rvq_dead_threshold);
    return m;
}

std::string TrainConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : to_map()) s += k + "=" + v + "\n";
    return s;
}

std::string TrainConfig::hash() const {
    // Run length is not part of a run's identity, so a resume may extend it.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : to_map()) {
        if (k == "train.epochs" || k == "train.max_steps") continue;
        for (unsigned char c : k + "=" + v + "\n") {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<std::pair<std::string, std::string>> deferred;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        // loss.scale resets every lambda, so apply it before any explicit lambda.
        if (key == "loss.scale") cfg.set(key, value);
        else deferred.emplace_back(std::move(key), std::move(value));
    }
    for (const auto& [k, v] : deferred) cfg.set(k, v);
    return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void apply_seed_env(TrainConfig& cfg) {
    if (const char* s = std::getenv("DMCODEC_SEED"); s != nullptr && *s != '\0') cfg.set("train.seed", s);
}

} // namespace dmcodec

#include "flowsdf/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowsdf/errors.hpp"

namespace flowsdf {

namespace {

enum class Kind { Int, Float, Bool, Str, IntList };

struct KeySpec {
    const char* key;
    Kind kind;
    const char* default_value;
};

// The full key registry. Paths default to empty and are required by the
// subcommands that consume them.
const KeySpec kRegistry[] = {
    {"run.command", Kind::Str, ""},
    {"threads", Kind::Int, "0"},
    {"data.dir", Kind::Str, ""},
    {"data.count_train", Kind::Int, "200"},
    {"data.count_test", Kind::Int, "50"},
    {"data.size", Kind::Int, "32"},
    {"data.objects_min", Kind::Int, "2"},
    {"data.objects_max", Kind::Int, "4"},
    {"data.radius_min", Kind::Float, "3"},
    {"data.radius_max", Kind::Float, "7"},
    {"data.noise_std", Kind::Float, "0.08"},
    {"data.illum_amp", Kind::Float, "0.15"},
    {"data.seed", Kind::Int, "7"},
    {"sdf.delta", Kind::Float, "5"},
    {"model.c1", Kind::Int, "16"},
    {"model.c2", Kind::Int, "32"},
    {"model.cb", Kind::Int, "64"},
    {"model.time_dim", Kind::Int, "64"},
    {"model.groups", Kind::Int, "4"},
    {"train.lr", Kind::Float, "1e-4"},
    {"train.batch", Kind::Int, "16"},
    {"train.epochs", Kind::Int, "260"},
    {"train.ema", Kind::Float, "0.9999"},
    {"train.crop", Kind::Int, "0"},
    {"train.seed", Kind::Int, "1"},
    {"train.target", Kind::Str, "sdf"},
    {"train.ckpt_every", Kind::Int, "0"},
    {"sampler.nfe", Kind::Int, "4"},
    {"sampler.noise_steps", Kind::Int, "1"},
    {"sampler.k", Kind::Int, "4"},
    {"sampler.solver", Kind::Str, "euler"},
    {"sampler.seed", Kind::Int, "1234"},
    {"sampler.use_ema", Kind::Bool, "0"},
    {"eval.patch", Kind::Int, "0"},
    {"eval.stride", Kind::Int, "0"},
    {"ablate.k_values", Kind::IntList, "1,2,4,8,16"},
    {"ablate.reps", Kind::Int, "5"},
    {"io.checkpoint", Kind::Str, ""},
    {"io.checkpoint_binary", Kind::Str, ""},
    {"io.image", Kind::Str, ""},
    {"io.mask", Kind::Str, ""},
};

const KeySpec* find_spec(const std::string& key) {
    for (const auto& s : kRegistry)
        if (key == s.key) return &s;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError("invalid value for '" + key + "': '" + value +
                          "' is not an integer");
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError("invalid value for '" + key + "': '" + value +
                          "' is not a number");
    return v;
}

void check_value(const std::string& key, Kind kind, const std::string& value) {
    switch (kind) {
        case Kind::Int:
            parse_int(key, value);
            break;
        case Kind::Float:
            parse_double(key, value);
            break;
        case Kind::Bool:
            if (value != "0" && value != "1" && value != "true" && value != "false")
                throw ConfigError("invalid value for '" + key + "': expected 0|1|true|false");
            break;
        case Kind::IntList: {
            std::stringstream ss(value);
            std::string item;
            bool any = false;
            while (std::getline(ss, item, ',')) {
                parse_int(key, trim(item));
                any = true;
            }
            if (!any)
                throw ConfigError("invalid value for '" + key + "': empty list");
            break;
        }
        case Kind::Str:
            break;
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& s : kRegistry) values_[s.key] = s.default_value;
}

const std::vector<std::string>& RunConfig::known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& s : kRegistry) k.push_back(s.key);
        return k;
    }();
    return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_spec(key);
    if (!spec) throw ConfigError("unknown key '" + key + "'");
    check_value(key, spec->kind, value);
    values_[key] = value;
    explicit_[key] = true;
}

bool RunConfig::was_set(const std::string& key) const {
    const auto it = explicit_.find(key);
    return it != explicit_.end() && it->second;
}

void RunConfig::set_kv(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("'" + path + "' line " + std::to_string(lineno) +
                              ": expected key = value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

bool RunConfig::has(const std::string& key) const {
    const auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    return parse_int(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
    return parse_double(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    return v == "1" || v == "true";
}

std::vector<uint32_t> RunConfig::get_int_list(const std::string& key) const {
    std::vector<uint32_t> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const int64_t v = parse_int(key, trim(item));
        if (v < 1) throw ConfigError("invalid value for '" + key + "': entries must be >= 1");
        out.push_back(uint32_t(v));
    }
    return out;
}

std::string RunConfig::serialized() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
}

SyntheticConfig RunConfig::synthetic_config() const {
    SyntheticConfig c;
    c.size = uint32_t(get_int("data.size"));
    c.objects_min = uint32_t(get_int("data.objects_min"));
    c.objects_max = uint32_t(get_int("data.objects_max"));
    c.radius_min = get_double("data.radius_min");
    c.radius_max = get_double("data.radius_max");
    c.noise_std = get_double("data.noise_std");
    c.illum_amp = get_double("data.illum_amp");
    c.seed = uint64_t(get_int("data.seed"));
    return c;
}

ModelDescriptor RunConfig::model_descriptor() const {
    ModelDescriptor d;
    d.image_channels = 1;
    d.c1 = uint32_t(get_int("model.c1"));
    d.c2 = uint32_t(get_int("model.c2"));
    d.cb = uint32_t(get_int("model.cb"));
    d.time_dim = uint32_t(get_int("model.time_dim"));
    d.groups = uint32_t(get_int("model.groups"));
    d.validate();
    return d;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c;
    c.learning_rate = get_double("train.lr");
    c.batch_size = uint32_t(get_int("train.batch"));
    c.epochs = uint32_t(get_int("train.epochs"));
    c.ema_decay = get_double("train.ema");
    c.crop_size = uint32_t(get_int("train.crop"));
    c.seed = uint64_t(get_int("train.seed"));
    const std::string& target = get("train.target");
    if (target == "sdf") c.target = TrainConfig::Target::Sdf;
    else if (target == "binary") c.target = TrainConfig::Target::Binary;
    else throw ConfigError("invalid value for 'train.target': expected sdf|binary");
    c.checkpoint_every = uint32_t(get_int("train.ckpt_every"));
    c.threads = int(get_int("threads"));
    c.validate();
    return c;
}

SamplerConfig RunConfig::sampler_config() const {
    SamplerConfig c;
    c.nfe = uint32_t(get_int("sampler.nfe"));
    c.noise_steps = uint32_t(get_int("sampler.noise_steps"));
    c.ensemble = uint32_t(get_int("sampler.k"));
    c.solver = solver_from_string(get("sampler.solver"));
    c.seed = uint64_t(get_int("sampler.seed"));
    c.use_ema = get_bool("sampler.use_ema");
    c.threads = int(get_int("threads"));
    c.validate();
    return c;
}

}  // namespace flowsdf

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsdf/model.hpp"
#include "flowsdf/sampler.hpp"
#include "flowsdf/synth.hpp"
#include "flowsdf/train.hpp"

namespace flowsdf {

// Flat namespaced key=value configuration. Keys are fixed by a registry;
// unknown keys are rejected. Values are validated on assignment, so typed
// getters never fail. File format: one "key = value" per line, '#' starts a
// comment, UTF-8.
class RunConfig {
public:
    RunConfig();  // registry defaults

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    void set_kv(const std::string& key_equals_value);  // "key=value"

    // True when the key was assigned by a file or an override (not a default).
    bool was_set(const std::string& key) const;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<uint32_t> get_int_list(const std::string& key) const;

    // Sorted "key = value" lines; reparsable by load_file.
    std::string serialized() const;

    // Typed views over the relevant key groups.
    SyntheticConfig synthetic_config() const;
    ModelDescriptor model_descriptor() const;
    TrainConfig train_config() const;
    SamplerConfig sampler_config() const;

    static const std::vector<std::string>& known_keys();

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

}  // namespace flowsdf

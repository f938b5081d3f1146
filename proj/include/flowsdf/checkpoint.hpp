#pragma once

#include <string>

#include "flowsdf/model.hpp"

namespace flowsdf {

struct Checkpoint {
    ModelParams params;
    ModelParams ema;
    bool has_ema = false;
    std::string config_text;  // resolved run configuration, may be empty
};

// Binary container: magic "FSDF", version u32 LE, parameter count u32 LE,
// then per entry: name length u16 LE + UTF-8 name, rank u8, dims u32 LE each,
// float32 LE row-major payload. EMA tensors are stored with an "ema." name
// prefix; the resolved configuration rides along as the float-encoded entry
// "meta.config".
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelParams* ema, const std::string& config_text);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace flowsdf

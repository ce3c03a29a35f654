#pragma once

#include <string>
#include <vector>

#include "stlm/config.hpp"
#include "stlm/model.hpp"
#include "stlm/optim.hpp"

namespace stlm {

// On-disk container: magic "STLM1", a uint64 little-endian header length,
// a UTF-8 JSON header (config, iteration, tensor directory with name,
// dtype, dims and byte offset), then raw little-endian tensor payloads.
struct Checkpoint {
    struct TensorRecord {
        std::string name;
        Shape dims;
        std::vector<float> data;
    };

    RunConfig config;
    int iteration{0};
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void write_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const std::string& path);

// Snapshot of the deduplicated parameters plus optimizer moments
// (opt.m.<name> / opt.v.<name>) when an optimizer is given.
Checkpoint make_checkpoint(const RunConfig& cfg, int iteration, const ParamStore<float>& params,
                           const AdamW<float>* opt);

// Copies tensor payloads back into an existing parameter store (and
// optimizer, when given). Shape or name mismatches raise FormatError
// naming the offending tensor.
void restore_checkpoint(const Checkpoint& cp, ParamStore<float>& params, AdamW<float>* opt);

} // namespace stlm

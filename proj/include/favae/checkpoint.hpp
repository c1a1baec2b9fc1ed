#ifndef FAVAE_CHECKPOINT_HPP
#define FAVAE_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

// Ordered named-tensor container backing checkpoints, subband files and
// latent caches. Binary layout (little-endian): magic "FAVAE1", u32 count,
// then per tensor: u32 name length, name bytes, u32 rank, u32 dims, raw f32
// data. Save/load round trips bit-exactly.
struct NamedTensors {
    std::vector<std::pair<std::string, TensorF>> items;

    void add(const std::string& name, TensorF t);
    bool has(const std::string& name) const;
    const TensorF& get(const std::string& name) const;  // DataError if absent

    double get_scalar(const std::string& name) const;
    void add_scalar(const std::string& name, double v);
};

std::string serialize_tensors(const NamedTensors& t);
NamedTensors deserialize_tensors(const std::string& bytes);

// File variants; writes are atomic (temp file + rename).
void save_tensors(const std::string& path, const NamedTensors& t);
NamedTensors load_tensors(const std::string& path);

}  // namespace favae

#endif

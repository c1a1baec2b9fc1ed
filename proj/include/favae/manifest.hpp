#ifndef FAVAE_MANIFEST_HPP
#define FAVAE_MANIFEST_HPP

#include <optional>
#include <string>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

// Dataset listing: one `path[,class]` line per entry, paths relative to the
// manifest's directory. Class ids, when present, must be dense non-negative
// integers (0..K-1 all used).
struct DatasetManifest {
    std::string root;
    struct Entry {
        std::string path;
        std::optional<int> class_id;
    };
    std::vector<Entry> entries;
    ValueRange range = ValueRange::unit;

    bool labeled() const;
    void validate() const;  // density of class ids; non-empty
};

DatasetManifest load_manifest(const std::string& path, ValueRange range);

// Loads and decodes every referenced image (DataError on the first failure).
std::vector<ImageTensor> load_dataset(const DatasetManifest& m);

}  // namespace favae

#endif

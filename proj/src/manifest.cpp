#include "favae/manifest.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include "favae/fsutil.hpp"
#include "favae/image_io.hpp"

namespace favae {

bool DatasetManifest::labeled() const {
    if (entries.empty()) return false;
    for (const auto& e : entries)
        if (!e.class_id.has_value()) return false;
    return true;
}

void DatasetManifest::validate() const {
    if (entries.empty()) throw DataError("manifest lists no entries");
    std::set<int> classes;
    bool any_label = false, all_label = true;
    for (const auto& e : entries) {
        if (e.class_id.has_value()) {
            any_label = true;
            if (*e.class_id < 0)
                throw DataError(msg("manifest: negative class id ", *e.class_id, " for '", e.path,
                                    "'"));
            classes.insert(*e.class_id);
        } else {
            all_label = false;
        }
    }
    if (any_label && !all_label)
        throw DataError("manifest mixes labeled and unlabeled entries");
    if (any_label) {
        const int k = static_cast<int>(classes.size());
        for (int c = 0; c < k; ++c)
            if (!classes.count(c))
                throw DataError(msg("manifest: class ids are not dense, missing ", c, " out of ",
                                    k, " classes"));
    }
}

DatasetManifest load_manifest(const std::string& path, ValueRange range) {
    DatasetManifest m;
    m.range = range;
    m.root = std::filesystem::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";

    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        DatasetManifest::Entry e;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos) {
            e.path = line;
        } else {
            e.path = line.substr(0, comma);
            const std::string cls = line.substr(comma + 1);
            try {
                size_t used = 0;
                const int v = std::stoi(cls, &used);
                if (used != cls.size()) throw std::invalid_argument(cls);
                e.class_id = v;
            } catch (const std::exception&) {
                throw DataError(msg("manifest line ", lineno, ": bad class id '", cls, "'"));
            }
        }
        if (e.path.empty()) throw DataError(msg("manifest line ", lineno, ": empty path"));
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

std::vector<ImageTensor> load_dataset(const DatasetManifest& m) {
    m.validate();
    std::vector<ImageTensor> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) out.push_back(read_image(m.root + "/" + e.path, m.range));
    return out;
}

}  // namespace favae

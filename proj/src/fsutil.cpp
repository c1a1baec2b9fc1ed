#include "favae/fsutil.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "favae/errors.hpp"

namespace favae {

void write_file_atomic(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const fs::path tmp = target.parent_path() /
                         (target.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(msg("cannot open '", tmp.string(), "' for writing"));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError(msg("short write to '", tmp.string(), "'"));
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError(msg("cannot rename temp file onto '", path, "'"));
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(msg("cannot open '", path, "' for reading"));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError(msg("read failure on '", path, "'"));
    return bytes;
}

}  // namespace favae

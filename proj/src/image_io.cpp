#include "favae/image_io.hpp"

#include <cmath>

#include "favae/fsutil.hpp"

namespace favae {

namespace {

struct Scanner {
    const std::string& b;
    size_t pos = 0;
    const std::string& origin;

    // Skips whitespace and '#' comment lines between header tokens.
    void skip_space() {
        while (pos < b.size()) {
            const char c = b[pos];
            if (c == '#') {
                while (pos < b.size() && b[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int number() {
        skip_space();
        if (pos >= b.size() || b[pos] < '0' || b[pos] > '9')
            throw DataError(msg("cannot decode '", origin, "': malformed netpbm header"));
        long v = 0;
        while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
            v = v * 10 + (b[pos] - '0');
            if (v > 1 << 24) throw DataError(msg("cannot decode '", origin, "': header overflow"));
            ++pos;
        }
        return static_cast<int>(v);
    }
};

}  // namespace

ImageTensor decode_image(const std::string& bytes, ValueRange range, const std::string& origin) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw DataError(msg("cannot decode '", origin, "': not a binary P5/P6 netpbm file"));
    const int channels = bytes[1] == '6' ? 3 : 1;
    Scanner sc{bytes, 2, origin};
    const int width = sc.number();
    const int height = sc.number();
    const int maxval = sc.number();
    if (width < 1 || height < 1 || maxval < 1 || maxval > 255)
        throw DataError(msg("cannot decode '", origin, "': unsupported dimensions or maxval"));
    // Exactly one whitespace byte separates the header from pixel data.
    if (sc.pos >= bytes.size())
        throw DataError(msg("cannot decode '", origin, "': truncated header"));
    ++sc.pos;
    const size_t need = static_cast<size_t>(width) * height * channels;
    if (bytes.size() - sc.pos < need)
        throw DataError(msg("cannot decode '", origin, "': pixel data truncated (need ", need,
                            " bytes, have ", bytes.size() - sc.pos, ")"));

    const double lo = range_lo(range), hi = range_hi(range);
    TensorF t({channels, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                const unsigned char raw =
                    static_cast<unsigned char>(bytes[sc.pos + (static_cast<size_t>(y) * width + x) *
                                                                  channels +
                                                     c]);
                const double unit = static_cast<double>(raw) / maxval;
                t.at(c, y, x) = static_cast<float>(lo + unit * (hi - lo));
            }
    return ImageTensor(std::move(t), range);
}

std::string encode_image(const ImageTensor& img) {
    const int C = img.channels();
    if (C != 1 && C != 3)
        throw DimensionError(msg("write_image: only 1- or 3-channel images, got ", C));
    const int H = img.height(), W = img.width();
    std::string out = (C == 3 ? "P6\n" : "P5\n") + std::to_string(W) + " " + std::to_string(H) +
                      "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(H) * W * C);
    const double lo = range_lo(img.range), hi = range_hi(img.range);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double unit = (static_cast<double>(img.data.at(c, y, x)) - lo) / (hi - lo);
                unit = std::min(1.0, std::max(0.0, unit));
                out.push_back(static_cast<char>(
                    static_cast<unsigned char>(std::lround(unit * 255.0))));
            }
    return out;
}

ImageTensor read_image(const std::string& path, ValueRange range) {
    return decode_image(read_file(path), range, path);
}

void write_image(const std::string& path, const ImageTensor& img) {
    write_file_atomic(path, encode_image(img));
}

}  // namespace favae

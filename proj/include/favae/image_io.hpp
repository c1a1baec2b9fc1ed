#ifndef FAVAE_IMAGE_IO_HPP
#define FAVAE_IMAGE_IO_HPP

#include <string>

#include "favae/tensor.hpp"

namespace favae {

// Binary PPM (P6, 3-channel) and PGM (P5, 1-channel) with maxval <= 255.
// Pixels map linearly between bytes and the declared float range; writing
// clamps and rounds to nearest, so a read-write round trip stays within one
// gray level.
ImageTensor read_image(const std::string& path, ValueRange range);
void write_image(const std::string& path, const ImageTensor& img);  // picks P6/P5 by channels

std::string encode_image(const ImageTensor& img);
ImageTensor decode_image(const std::string& bytes, ValueRange range, const std::string& origin);

}  // namespace favae

#endif

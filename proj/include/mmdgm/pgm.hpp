#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mmdgm/errors.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

namespace detail {

inline std::uint8_t pgm_byte(double v) {
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

}  // namespace detail

// Binary 8-bit PGM (P5). Each image is a rank-1 row-major raster of a square
// with the given side; the grid runs left to right, top to bottom, padding
// unused cells with black. Values are clamped to [0, 1] and scaled to 255.
template <class S>
void write_pgm_grid(const std::string& path, const std::vector<Tensor<S>>& images, int side,
                    int cols) {
  if (side < 1) throw ContractError("pgm: side must be positive");
  if (images.empty()) throw ContractError("pgm: no images to write");
  if (cols < 1) cols = static_cast<int>(images.size());
  for (const auto& im : images)
    if (im.rank() != 1 || im.shape[0] != side * side)
      throw DimensionError("pgm: image " + im.shape_str() + " is not a square of side " +
                           std::to_string(side));
  int n = static_cast<int>(images.size());
  int rows = (n + cols - 1) / cols;
  int W = cols * side, H = rows * side;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(W) * static_cast<std::size_t>(H), 0);
  for (int i = 0; i < n; ++i) {
    int gr = i / cols, gc = i % cols;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c)
        buf[static_cast<std::size_t>((gr * side + r) * W + gc * side + c)] =
            detail::pgm_byte(static_cast<double>(images[static_cast<std::size_t>(i)].at(
                r * side + c)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << "P5\n" << W << ' ' << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw FormatError("short write to '" + path + "'");
}

template <class S>
void write_pgm(const std::string& path, const Tensor<S>& image, int side) {
  write_pgm_grid(path, std::vector<Tensor<S>>{image}, side, 1);
}

}  // namespace mmdgm

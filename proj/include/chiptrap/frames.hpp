#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "chiptrap/dynamics.hpp"
#include "chiptrap/scenario.hpp"

namespace chiptrap {

/// Column density on the frame grid; row 0 is the side nearest the chip.
struct DensityImage {
  int nx = 0;
  int nz = 0;
  std::vector<double> counts;  // row-major, atoms per pixel

  double at(int i, int j) const { return counts[static_cast<std::size_t>(j) * nx + i]; }
  double total() const;
  double peak() const;
};

/// Ballistic flight of the alive atoms for `duration` under `gravity`.
EnsembleState free_flight(const EnsembleState& state, double duration, const Vec3& gravity);

/// Histograms alive atoms along the projection axis (after the configured time of flight)
/// and applies the Gaussian blur. Atoms outside the grid are dropped.
DensityImage render_density(const EnsembleState& state, const FrameConfig& frame, const Vec3& gravity);

/// Quantizes counts * scale to 16 bits (clamped) and writes binary PGM.
void write_pgm16(const DensityImage& image, double scale, const std::filesystem::path& path);
/// Reads a 16-bit P5 file back as raw pixel values.
DensityImage read_pgm16(const std::filesystem::path& path);

/// Horizontal positions (m) of local maxima of the column-summed profile that exceed
/// `fraction` of its peak, after smoothing over `smooth` pixels.
std::vector<double> profile_maxima(const DensityImage& image, const FrameConfig& frame, double fraction = 0.2,
                                   int smooth = 3);

}  // namespace chiptrap

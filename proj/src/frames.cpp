#include "chiptrap/frames.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "chiptrap/errors.hpp"

namespace chiptrap {

double DensityImage::total() const {
  double s = 0.0;
  for (double c : counts) s += c;
  return s;
}

double DensityImage::peak() const { return counts.empty() ? 0.0 : *std::max_element(counts.begin(), counts.end()); }

EnsembleState free_flight(const EnsembleState& state, double duration, const Vec3& gravity) {
  if (!(duration >= 0.0)) throw InvalidParameter("flight duration must be non-negative");
  EnsembleState out = state;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.alive[i]) continue;
    out.positions[i] += out.velocities[i] * duration + gravity * (0.5 * duration * duration);
    out.velocities[i] += gravity * duration;
  }
  out.t += duration;
  return out;
}

namespace {

// Horizontal and vertical image axes for a projection axis.
std::pair<int, int> image_axes(char projection) {
  switch (projection) {
    case 'x': return {1, 2};
    case 'y': return {0, 2};
    case 'z': return {0, 1};
  }
  throw InvalidParameter("projection axis must be x, y or z");
}

std::vector<double> gaussian_kernel(double sigma_px) {
  const int r = static_cast<int>(std::ceil(4.0 * sigma_px));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
  for (double& v : k) v /= s;
  return k;
}

}  // namespace

DensityImage render_density(const EnsembleState& state, const FrameConfig& frame, const Vec3& gravity) {
  frame.validate();
  const EnsembleState flown = frame.tof > 0.0 ? free_flight(state, frame.tof, gravity) : state;
  const auto [ha, va] = image_axes(frame.projection);
  DensityImage img;
  img.nx = frame.nx;
  img.nz = frame.nz;
  img.counts.assign(static_cast<std::size_t>(frame.nx) * frame.nz, 0.0);
  const double h0 = frame.center_h - 0.5 * frame.nx * frame.pixel;
  const double v0 = frame.center_v - 0.5 * frame.nz * frame.pixel;
  for (std::size_t a = 0; a < flown.size(); ++a) {
    if (!flown.alive[a]) continue;
    const double fh = (flown.positions[a][ha] - h0) / frame.pixel;
    const double fv = (flown.positions[a][va] - v0) / frame.pixel;
    if (!(fh >= 0.0 && fh < frame.nx && fv >= 0.0 && fv < frame.nz)) continue;
    img.counts[static_cast<std::size_t>(fv) * frame.nx + static_cast<std::size_t>(fh)] += 1.0;
  }
  if (frame.blur > 0.0) {
    const auto k = gaussian_kernel(frame.blur / frame.pixel);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(img.counts.size(), 0.0);
    for (int j = 0; j < img.nz; ++j)
      for (int i = 0; i < img.nx; ++i) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d) {
          const int ii = i + d;
          if (ii >= 0 && ii < img.nx) s += k[d + r] * img.counts[static_cast<std::size_t>(j) * img.nx + ii];
        }
        tmp[static_cast<std::size_t>(j) * img.nx + i] = s;
      }
    for (int j = 0; j < img.nz; ++j)
      for (int i = 0; i < img.nx; ++i) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d) {
          const int jj = j + d;
          if (jj >= 0 && jj < img.nz) s += k[d + r] * tmp[static_cast<std::size_t>(jj) * img.nx + i];
        }
        img.counts[static_cast<std::size_t>(j) * img.nx + i] = s;
      }
  }
  return img;
}

void write_pgm16(const DensityImage& image, double scale, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.nx << ' ' << image.nz << "\n65535\n";
  std::vector<unsigned char> row(2 * static_cast<std::size_t>(image.nx));
  for (int j = 0; j < image.nz; ++j) {
    for (int i = 0; i < image.nx; ++i) {
      const double v = std::clamp(std::round(image.at(i, j) * scale), 0.0, 65535.0);
      const auto u = static_cast<std::uint16_t>(v);
      row[2 * i] = static_cast<unsigned char>(u >> 8);
      row[2 * i + 1] = static_cast<unsigned char>(u & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

DensityImage read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  DensityImage img;
  in >> magic >> img.nx >> img.nz >> maxval;
  if (magic != "P5" || maxval != 65535 || img.nx < 1 || img.nz < 1) throw ParseError(path.string(), "not a 16-bit P5 image");
  in.get();
  img.counts.resize(static_cast<std::size_t>(img.nx) * img.nz);
  for (double& c : img.counts) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) throw ParseError(path.string(), "truncated image");
    c = static_cast<double>((b[0] << 8) | b[1]);
  }
  return img;
}

std::vector<double> profile_maxima(const DensityImage& image, const FrameConfig& frame, double fraction, int smooth) {
  std::vector<double> col(image.nx, 0.0);
  for (int j = 0; j < image.nz; ++j)
    for (int i = 0; i < image.nx; ++i) col[i] += image.at(i, j);
  std::vector<double> sm(image.nx, 0.0);
  for (int i = 0; i < image.nx; ++i)
    for (int d = -smooth; d <= smooth; ++d)
      if (i + d >= 0 && i + d < image.nx) sm[i] += col[i + d];
  const double peak = *std::max_element(sm.begin(), sm.end());
  std::vector<double> out;
  if (!(peak > 0.0)) return out;
  const double h0 = frame.center_h - 0.5 * frame.nx * frame.pixel;
  for (int i = 0; i < image.nx; ++i) {
    const double left = i > 0 ? sm[i - 1] : -1.0;
    const double right = i + 1 < image.nx ? sm[i + 1] : -1.0;
    if (sm[i] >= fraction * peak && sm[i] > left && sm[i] >= right) out.push_back(h0 + (i + 0.5) * frame.pixel);
  }
  return out;
}

}  // namespace chiptrap

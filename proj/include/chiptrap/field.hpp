#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "chiptrap/geometry.hpp"
#include "chiptrap/vec3.hpp"

namespace chiptrap {

/// Instantaneous channel currents (A) and homogeneous bias field (T).
/// Channels absent from the map carry no current. `gradient` is an optional ambient field
/// gradient dB_i/dx_j (T/m) about the origin; it is not a knob, it models the environment.
struct ControlVector {
  std::map<ChannelId, double> currents;
  Vec3 bias;
  Mat3 gradient{};

  double current(const ChannelId& channel) const;
  void set(const ChannelId& channel, double amps) { currents[channel] = amps; }
  ControlVector scaled(double factor) const;
  /// Throws InvalidParameter for non-finite values or |bias| >= 0.1 T.
  void validate() const;

  friend bool operator==(const ControlVector&, const ControlVector&) = default;
};

/// Source-free ambient gradient with dB_x/dx = g (diag(g, -g/2, -g/2)).
Mat3 axial_gradient(double g);

struct SpeciesParams {
  double mass = 0.0;    // kg
  double mf_gf = 1.0;   // m_F g_F; magnetic moment is mf_gf * mu_Bohr
  Vec3 gravity;         // m/s^2

  /// 87Rb in |F=2, m_F=2>, gravity along +z (chip mounted upside down).
  static SpeciesParams rb87();
  double moment() const;
};

struct FieldSample {
  Vec3 B;
  Mat3 gradB{};                    // dB_i/dx_j, T/m
  std::optional<Mat3> hessB_mag;   // d^2|B|/dx_i dx_j, T/m^2
};

inline constexpr double kSingularityGuard = 1e-9;
inline constexpr double kDefaultFdStep = 0.5e-6;

/// Closed-form field of a finite straight filament. Throws SingularityError within 1 nm
/// of the segment.
Vec3 segment_field(const WireSegment& seg, double current, const Vec3& p);
/// Analytic Jacobian dB_i/dx_j of segment_field.
Mat3 segment_field_jacobian(const WireSegment& seg, double current, const Vec3& p);

Vec3 total_field(const ChipLayout& layout, const ControlVector& ctrl, const Vec3& p);
/// U = mF gF muB |B| - m g.p
double potential(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                 const Vec3& p);
/// Central-difference Jacobian of B and 27-point Hessian of |B|. Optional Richardson
/// refinement combines steps h and h/2.
FieldSample field_derivatives(const ChipLayout& layout, const ControlVector& ctrl, const Vec3& p,
                              double step = kDefaultFdStep, bool richardson = false);

/// Layout bound to one ControlVector, flattened for repeated evaluation. This is the
/// hot path for profiles, ensembles and frames.
class FieldModel {
 public:
  FieldModel(const ChipLayout& layout, const ControlVector& ctrl);

  Vec3 field(const Vec3& p) const;
  void field_and_jacobian(const Vec3& p, Vec3& B, Mat3& J) const;
  double magnitude(const Vec3& p) const { return norm(field(p)); }
  /// grad |B| from the analytic Jacobian.
  Vec3 magnitude_gradient(const Vec3& p) const;

  /// Evaluates many points; results are independent of `threads`.
  std::vector<Vec3> field_batch(std::span<const Vec3> points, int threads = 1) const;

 private:
  struct Filament {
    Vec3 a;
    Vec3 b;
    double strength;  // mu0 I weight / 4 pi
  };
  std::vector<Filament> filaments_;
  Vec3 bias_;
  Mat3 gradient_{};
  bool has_gradient_ = false;
};

/// Mechanical potential of one species in a bound field.
class Potential {
 public:
  Potential(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species);
  Potential(FieldModel model, const SpeciesParams& species);

  double energy(const Vec3& p) const;
  Vec3 gradient(const Vec3& p) const;
  /// Energy and gradient in one pass; returns |B| as well.
  double energy_and_gradient(const Vec3& p, Vec3& grad, double* field_magnitude = nullptr) const;
  /// Symmetrized central difference of the analytic gradient.
  Mat3 hessian(const Vec3& p, double step = kDefaultFdStep) const;

  const FieldModel& field() const { return model_; }
  const SpeciesParams& species() const { return species_; }

 private:
  FieldModel model_;
  SpeciesParams species_;
  double moment_;
};

}  // namespace chiptrap

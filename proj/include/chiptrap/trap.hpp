#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chiptrap/field.hpp"
#include "chiptrap/units.hpp"

namespace chiptrap {

/// Scalar energy surface (J over m). Implemented by Potential and by synthetic test wells.
class EnergyLandscape {
 public:
  virtual ~EnergyLandscape() = default;
  virtual double energy(const Vec3& p) const = 0;
  virtual Vec3 gradient(const Vec3& p) const = 0;
  /// Defaults to central differences of gradient().
  virtual Mat3 hessian(const Vec3& p) const;
  /// Mass used to turn curvatures into frequencies.
  virtual double mass() const = 0;
};

/// Adapter exposing a Potential as a landscape.
class PotentialLandscape final : public EnergyLandscape {
 public:
  explicit PotentialLandscape(Potential potential) : potential_(std::move(potential)) {}
  PotentialLandscape(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species)
      : potential_(layout, ctrl, species) {}
  double energy(const Vec3& p) const override { return potential_.energy(p); }
  Vec3 gradient(const Vec3& p) const override { return potential_.gradient(p); }
  Mat3 hessian(const Vec3& p) const override { return potential_.hessian(p); }
  double mass() const override { return potential_.species().mass; }
  const Potential& potential() const { return potential_; }

 private:
  Potential potential_;
};

enum class TrapClass { IoffePritchard, QuadrupoleLike };

/// B0 below which a minimum is flagged as quadrupole-like (Majorana-unsafe).
inline constexpr double kQuadrupoleThreshold = 0.1 * units::gauss;

struct TrapCharacterization {
  Vec3 position;
  double B0 = 0.0;                   // T
  double energy = 0.0;               // U at the minimum, J
  std::array<double, 3> freqs{};     // Hz, ascending
  std::array<Vec3, 3> axes{};        // orthonormal, axes[i] belongs to freqs[i]
  std::optional<double> depth;       // J, filled by trap_depth
  double surface_distance = 0.0;     // m
  TrapClass classification = TrapClass::IoffePritchard;

  /// Frequency of the principal axis best aligned with `direction`.
  double frequency_along(const Vec3& direction) const;
};

struct FindMinimumOptions {
  int max_iterations = 200;
  double position_tolerance = 1e-13;  // m, Newton step length at convergence
  double gradient_tolerance = 1e-12;  // J/m, checked after the step criterion is met
  double trust_radius = 40e-6;        // m, cap on a single step
  double max_travel = 3e-3;           // m from the seed before the trap counts as lost
  double min_height = 1e-6;           // m above the chip
  double hessian_step = kDefaultFdStep;
  bool require_ioffe_pritchard = false;
};

/// Damped Newton descent on the landscape with gradient-descent fallback where the
/// Hessian is not positive definite. Throws NoConvergence or TrapError.
TrapCharacterization find_minimum(const EnergyLandscape& landscape, const Vec3& seed,
                                  const FindMinimumOptions& options = {});
TrapCharacterization find_minimum(const ChipLayout& layout, const ControlVector& ctrl,
                                  const SpeciesParams& species, const Vec3& seed,
                                  const FindMinimumOptions& options = {});

/// Region escape paths are confined to. Defaults follow the dynamics loss box.
struct DomainBox {
  Vec3 lo{-2.0e-3, -1.0e-3, 5e-6};
  Vec3 hi{6.6e-3, 1.0e-3, 2.0e-3};
  bool contains(const Vec3& p) const;
};

/// Lower bound on the escape energy: minimum over the axial valley (both directions)
/// and the +-y, +-z rays of the highest energy met along the path, minus U at the trap.
/// Throws InvalidParameter when the box does not contain the trap, and Error when no path
/// reaches a barrier inside the box.
double trap_depth(const EnergyLandscape& landscape, const TrapCharacterization& trap,
                  const DomainBox& box = {}, double step = 2e-6);
double trap_depth(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                  const TrapCharacterization& trap, const DomainBox& box = {});

struct ProfileSample {
  double x = 0.0;
  double Bmin = 0.0;  // T, minimum of |B| in the y-z plane at x
  double y = 0.0;
  double z = 0.0;
  bool valid = true;  // false marks a gap where the transverse search diverged
};

struct AxialProfile {
  std::vector<ProfileSample> samples;
  bool complete() const;
};

/// Minimum of |B| over (y, z) for each of n equally spaced x in [x_lo, x_hi], warm-started
/// along x. Work is split into fixed chunks (cold-started with a 3-sample overlap), so the
/// result does not depend on `threads`.
AxialProfile axial_profile(const ChipLayout& layout, const ControlVector& ctrl, double x_lo,
                           double x_hi, int n, double seed_y = 0.0, double seed_z = 250e-6,
                           int threads = 1);

/// Minimum of landscape energy over (y, z) at fixed x. Returns nullopt on divergence.
std::optional<Vec3> transverse_minimum(const EnergyLandscape& landscape, double x, double seed_y,
                                       double seed_z);

struct DoubleWell {
  TrapCharacterization left;
  TrapCharacterization right;
  double saddle_x = 0.0;
  double barrier = 0.0;     // J above the higher well bottom
  double separation = 0.0;  // m
};

/// Energies along the profile are moment * Bmin. Exactly two interior local minima are
/// required; extrema are refined by parabolic interpolation. Well characterizations carry
/// position, B0 and the axial frequency only.
DoubleWell double_well(const AxialProfile& profile, const SpeciesParams& species);
/// Same, with each well refined by find_minimum for full 3D characterization.
DoubleWell double_well(const ChipLayout& layout, const ControlVector& ctrl,
                       const SpeciesParams& species, const AxialProfile& profile);

/// Basin along x between two bounds (usually saddles). seed_y/seed_z start the transverse search.
struct Basin {
  double x_lo = 0.0;
  double x_hi = 0.0;
  double seed_y = 0.0;
  double seed_z = 250e-6;
};

/// Z = integral over the basin of exp(-U / kT). Stored as log Z with the quadrature error
/// estimate (relative, from halving the panel count).
struct BoltzmannWeight {
  double log_z = 0.0;
  double rel_error = 0.0;
  double value() const;
};

BoltzmannWeight boltzmann_weight(const EnergyLandscape& landscape, const Basin& basin, double temperature);
BoltzmannWeight boltzmann_weight(const ChipLayout& layout, const ControlVector& ctrl,
                                 const SpeciesParams& species, const Basin& basin, double temperature);

/// Harmonic-oscillator length sqrt(hbar / (m 2 pi nu)).
double ground_state_extension(double frequency, const SpeciesParams& species);
/// Thomas-Fermi chemical potential (hbar w / 2)(15 N a_s / a_ho)^(2/5), w = 2 pi nu_mean.
double chemical_potential_tf(double atom_number, double mean_frequency, double scattering_length,
                             const SpeciesParams& species);

/// Geometric mean of the three trap frequencies.
double geometric_mean_frequency(const TrapCharacterization& trap);

}  // namespace chiptrap

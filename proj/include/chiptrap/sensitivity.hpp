#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "chiptrap/field.hpp"
#include "chiptrap/trap.hpp"

namespace chiptrap {

/// Independent zero-mean Gaussian noise on the trap controls.
/// Every channel with nonzero current and every nonzero bias component (a coil driven by its
/// own supply) fluctuates with relative sigma `current_rel`. Ambient fields add absolute noise
/// per component and an ambient dB_x/dx (source-free, see axial_gradient).
struct NoiseModel {
  double current_rel = 1e-5;
  Vec3 ambient_field{};       // T, sigma per component
  double ambient_gradient = 0.0;  // T/m, sigma of dB_x/dx

  /// The default model: currents only.
  static NoiseModel currents_only(double rel = 1e-5);
  /// Currents plus 1 mG per field component and 1 mG/cm of dB_x/dx.
  static NoiseModel with_ambient(double rel = 1e-5);
};

struct ChannelResponse {
  ChannelId channel;
  double current = 0.0;  // A, operating point
  Vec3 dpos;             // m/A
};

struct SensitivityOptions {
  double current_rel_step = 1e-5;
  double field_step = 1e-7;         // T (1 mG)
  double gradient_step = 1e-5;      // T/m (1 mG/cm)
  FindMinimumOptions refind = tight_refind();
  int threads = 1;

  static FindMinimumOptions tight_refind();
};

struct JitterBudget {
  Vec3 position;                          // unperturbed trap
  std::vector<ChannelResponse> dpos_dI;   // chip channels
  Mat3 dpos_dB{};                         // column j: response to a field along axis j, m/T
  Vec3 dpos_dgrad;                        // response to dB_x/dx, m per T/m
  NoiseModel noise;
  Vec3 rms_current;                       // m, chip channels and bias coils
  Vec3 rms_field;                         // m, ambient field
  Vec3 rms_gradient;                      // m, ambient gradient
  Vec3 rms;                               // m, quadrature sum
  bool nonlinear = false;                 // a perturbed re-solve lost the trap
  std::vector<std::string> notes;
};

/// Centered-difference responses of the trap position, re-solving the minimum from the
/// unperturbed position under +-delta on each knob and ambient perturbation.
JitterBudget linear_response(const ChipLayout& layout, const ControlVector& ctrl,
                             const SpeciesParams& species, const TrapCharacterization& trap,
                             const NoiseModel& noise = NoiseModel::currents_only(),
                             const SensitivityOptions& options = {});

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

struct MonteCarloJitter {
  std::size_t samples = 0;
  std::size_t lost = 0;   // samples where the trap could not be re-found
  Vec3 rms;               // m, about the unperturbed position
  Vec3 rms_error;         // m, bootstrap standard error
  Vec3 mean;              // m
  std::array<Histogram, 3> histograms;
};

/// Draws control perturbations from the noise model, re-finds the trap and reports the rms
/// displacement per axis. Sample i uses its own stream of `seed`, so the result does not
/// depend on `threads`. Requires n_samples >= 100.
MonteCarloJitter monte_carlo_jitter(const ChipLayout& layout, const ControlVector& ctrl,
                                    const SpeciesParams& species, const TrapCharacterization& trap,
                                    const NoiseModel& noise, std::size_t n_samples, std::uint64_t seed,
                                    const SensitivityOptions& options = {}, int bins = 41);

/// JSON report of a budget, optionally with a Monte Carlo comparison.
std::string budget_json(const JitterBudget& budget, const MonteCarloJitter* mc = nullptr);
/// Columns: bin_center_m, count_x, count_y, count_z (one centre column per axis range).
void write_histogram_csv(std::ostream& out, const MonteCarloJitter& mc);

}  // namespace chiptrap

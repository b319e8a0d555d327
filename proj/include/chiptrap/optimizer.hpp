#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chiptrap/trap.hpp"
#include "chiptrap/waveforms.hpp"

namespace chiptrap {

/// Knobs are channel names or one of "Bx", "By", "Bz" for the bias components.
using Knob = std::string;

double knob_value(const ControlVector& ctrl, const Knob& knob);
void set_knob(ControlVector& ctrl, const Knob& knob, double value);
bool is_bias_knob(const Knob& knob);

enum class Axis { X, Y, Z };
Vec3 axis_direction(Axis axis);
std::string to_string(Axis axis);
Axis axis_from_string(const std::string& s);

struct FrequencyTarget {
  Axis axis = Axis::X;
  double hz = 0.0;
  double tol = 1.0;  // Hz
};

/// Desired trap properties. Each constraint contributes (achieved - target) / tol to the
/// residual vector; knobs not listed in free_knobs keep their initial values.
struct TrapTarget {
  std::optional<double> x_target;
  double x_tol = 1e-6;
  std::optional<double> z_target;
  double z_tol = 1e-6;
  std::vector<FrequencyTarget> freq_targets;
  std::vector<Knob> free_knobs;
  Vec3 seed{0.0, 0.0, 250e-6};  // where the trap is looked for

  /// Throws InvalidParameter for empty constraint or knob lists and non-positive tolerances.
  void validate() const;
  std::size_t constraint_count() const;
};

/// Residuals in tolerance units, in the order x, z, frequencies.
std::vector<double> target_residuals(const TrapTarget& target, const TrapCharacterization& trap);

struct OptimizerOptions {
  double initial_damping = 1e-3;
  double damping_increase = 10.0;
  double damping_decrease = 3.0;
  double max_damping = 1e10;
  int max_trap_solves = 200;
  double current_step = 1e-3;           // A
  double bias_step = 10.0 * units::milligauss;
  double residual_goal = 1.0;           // all |r| below this counts as converged
  FindMinimumOptions trap{};
};

struct SolveResult {
  ControlVector ctrl;
  TrapCharacterization trap;
  std::vector<double> residuals;
  bool converged = false;
  int trap_solves = 0;
};

/// Levenberg-Marquardt on the residual vector, with a fresh find_minimum per evaluation
/// and a central finite-difference Jacobian over the free knobs. A lost trap is re-sought
/// once from target.seed; if that fails too the trial step is rejected. Throws TrapError
/// when no trap exists at the initial controls.
SolveResult solve_target(const ChipLayout& layout, const SpeciesParams& species, const TrapTarget& target,
                         const ControlVector& init, const OptimizerOptions& options = {});

/// d r_i / d knob_j by central differences with the knob steps scaled by `step_scale`.
/// Rows are residuals, columns knobs. Throws TrapError when a perturbed trap is lost.
std::vector<std::vector<double>> residual_jacobian(const ChipLayout& layout, const SpeciesParams& species,
                                                   const TrapTarget& target, const ControlVector& ctrl,
                                                   const Vec3& seed, const OptimizerOptions& options = {},
                                                   double step_scale = 1.0);

/// One knot of a sweep: the schedule value at s with the knobs to adjust.
struct SweepKnot {
  double s = 0.0;
  ControlVector base;
  TrapTarget target;
};

struct OptimizedKnot {
  double s = 0.0;
  ControlVector ctrl;
  TrapCharacterization trap;
  std::vector<double> residuals;
  bool converged = false;
  int trap_solves = 0;
};

struct OptimizedSchedule {
  ScheduleVariable variable = ScheduleVariable::Phase;
  std::vector<OptimizedKnot> knots;
  int order = 3;
  std::optional<double> period;  // periodic tables repeat the first knot one period later
  bool complete = true;          // false when a knot lost its trap and the sweep stopped
  std::string error;

  bool all_converged() const;
  /// Table schedule of the solved knots.
  Schedule schedule() const;
  /// Residuals, achieved characterizations and the transverse-y frequency range per knot.
  nlohmann::json report() const;
};

/// Solves knots in order. With continuation each knot starts from the previous solution's
/// free knobs and trap position; without it every knot starts from its own base and seed,
/// and knots may run on `threads` workers. A lost trap stops the sweep with a partial result.
OptimizedSchedule sweep_schedule(const ChipLayout& layout, const SpeciesParams& species,
                                 const std::vector<SweepKnot>& knots, bool continuation,
                                 const OptimizerOptions& options = {}, int threads = 1);

/// Follows one trap through a sequence of controls, seeding each search at the previous
/// position. Throws TrapError when it is lost.
std::vector<TrapCharacterization> track_trap(const ChipLayout& layout, const SpeciesParams& species,
                                             const std::vector<ControlVector>& controls, const Vec3& seed,
                                             const FindMinimumOptions& options = {});

struct HeightOnlyOptions {
  int knots = 32;
  bool vary_bias_y = false;       // knob By instead of the central wire current
  ChannelId central_channel = "I0";
  std::optional<double> z_ref;    // defaults to the mean height of the unoptimized sweep
  double z_tol = 1e-6;
  Vec3 seed{2.4e-3, 0.0, 250e-6}; // trap followed from phi = 0
};

struct HeightOnlyResult {
  OptimizedSchedule optimized;
  std::vector<TrapCharacterization> reference;  // the unoptimized sweep at the same knots
  double z_ref = 0.0;
};

/// Keeps the trap height constant over one period of a phase schedule by adjusting one
/// knob per knot.
HeightOnlyResult optimize_height(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                                 const HeightOnlyOptions& options = {}, const OptimizerOptions& lm = {});

using LandscapeFactory = std::function<std::unique_ptr<EnergyLandscape>(const ControlVector&)>;

struct ValleyExtrema {
  double left_x = 0.0;
  double right_x = 0.0;
  double saddle_x = 0.0;
  double left_energy = 0.0;
  double right_energy = 0.0;
  double saddle_energy = 0.0;
  Vec3 left_point;
  Vec3 right_point;
};

/// Energy along the transverse valley over [x_lo, x_hi]; requires exactly two interior
/// minima. Throws MultiplicityError otherwise.
ValleyExtrema valley_double_well(const EnergyLandscape& landscape, double x_lo, double x_hi, int samples,
                                 double seed_y, double seed_z);

struct BalanceOptions {
  double x_lo = 0.0;   // valley window; must contain both wells and nothing else
  double x_hi = 0.0;
  int samples = 161;
  double seed_y = 0.0;
  double seed_z = 100e-6;
  double weight_tol = 0.01;      // relative mismatch of the two weights
  double separation_tol = 0.05;  // relative change of the well separation
  int max_evaluations = 60;
  double initial_damping = 1e-3;
  double current_step = 1e-3;
};

struct BalanceResult {
  ControlVector ctrl;
  ValleyExtrema wells;
  double left_fraction = 0.5;  // Z_left / (Z_left + Z_right)
  double separation = 0.0;
  bool converged = false;
  int evaluations = 0;
};

/// Adjusts the free knobs so the Boltzmann weights of the two basins at temperature T
/// agree. With two knobs the well separation is also held at its initial value. Basins
/// meet at the saddle and end at the window edges.
BalanceResult balance_double_well(const LandscapeFactory& factory, const std::vector<Knob>& free,
                                  const ControlVector& ctrl, double temperature, const BalanceOptions& options);
BalanceResult balance_double_well(const ChipLayout& layout, const SpeciesParams& species,
                                  const std::vector<Knob>& free, const ControlVector& ctrl, double temperature,
                                  const BalanceOptions& options);

struct MergeBalanceOptions {
  ConveyorParams conveyor{};
  double temperature = 2e-6;
  double phi_lo = -0.5 * units::pi;
  double phi_hi = units::pi;
  int knots = 25;
  Vec3 seed{4.24e-3, 0.0, 280e-6};  // incoming conveyor well at phi_lo
  double window_margin = 250e-6;    // window starts this far left of the incoming well
  double window_hi = 5.6e-3;
  double merged_x = 4.85e-3;        // incoming well beyond this counts as merged
  ChannelId knob = "IH2";
};

struct MergeBalance {
  Schedule schedule;                // phase table over [phi_lo, phi_hi]
  std::vector<double> phis;
  std::vector<double> offsets;      // A added to the H2 formula at each knot
  std::vector<bool> balanced;       // false where the offset was carried over
};

/// H2 current giving equal Boltzmann weights to the incoming and the stationary well while
/// both exist, expressed as an offset to the H2 formula. Where the wells are merged or
/// not resolvable the nearest balanced offset is held.
MergeBalance balance_merge_schedule(const ChipLayout& layout, const SpeciesParams& species,
                                    const MergeBalanceOptions& options = {});

nlohmann::json trap_to_json(const TrapCharacterization& trap);

}  // namespace chiptrap

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chiptrap/trap.hpp"
#include "chiptrap/waveforms.hpp"

namespace chiptrap {

/// Seed expansion for independent streams.
std::uint64_t splitmix64(std::uint64_t& state);
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

/// ControlVector as a function of time over [0, duration].
struct ControlProgram {
  std::function<ControlVector(double)> at;
  std::vector<ChannelId> channels;  // every channel that may carry current
  double duration = 0.0;

  static ControlProgram constant(const ControlVector& ctrl, double duration);
  /// Phase schedule driven by a phase law; lasts law.end_time().
  static ControlProgram phase(const Schedule& schedule, const PhaseLaw& law);
  /// Phase schedule swept linearly from phi_from to phi_to.
  static ControlProgram phase_sweep(const Schedule& schedule, double phi_from, double phi_to, double duration);
  /// Fraction schedule stretched to `duration`.
  static ControlProgram ramp(const Schedule& schedule, double duration);
  /// Time schedule, starting at its first knot.
  static ControlProgram timed(const Schedule& schedule);
  /// Straight-line interpolation between two controls.
  static ControlProgram interpolate(const ControlVector& from, const ControlVector& to, double duration);

  ControlProgram then(const ControlProgram& next) const;
  /// Same program with an ambient gradient added to every control.
  ControlProgram with_gradient(const Mat3& gradient) const;
};

inline constexpr std::size_t kMaxChannels = 16;

/// Time-independent data at one point: per-channel unit-current fields and Jacobians.
struct PointFields {
  Vec3 p;
  std::array<Vec3, kMaxChannels> B{};
  std::array<Mat3, kMaxChannels> J{};
};

/// Control frozen at one instant, indexed like the potential's channels.
struct FrozenControl {
  std::array<double, kMaxChannels> current{};
  Vec3 bias;
  Mat3 gradient{};
};

/// Potential whose time dependence enters only through the frozen control. Splitting
/// point data from controls lets an integrator evaluate one point at two instants for the
/// price of one field evaluation.
class DynamicPotential {
 public:
  virtual ~DynamicPotential() = default;
  virtual double mass() const = 0;
  virtual FrozenControl freeze(double t) const = 0;
  virtual void prepare(const Vec3& p, PointFields& f) const = 0;
  /// U at the prepared point with grad U and |B| (0 for non-magnetic potentials).
  virtual double evaluate(const PointFields& f, const FrozenControl& c, Vec3& grad, double& field) const = 0;

  double energy(double t, const Vec3& p) const;
};

/// Chip wires driven by a control program. Fields are linear in the channel currents.
class ChipPotential final : public DynamicPotential {
 public:
  ChipPotential(const ChipLayout& layout, const SpeciesParams& species, ControlProgram program);

  double mass() const override { return species_.mass; }
  FrozenControl freeze(double t) const override;
  void prepare(const Vec3& p, PointFields& f) const override;
  double evaluate(const PointFields& f, const FrozenControl& c, Vec3& grad, double& field) const override;

  const ControlProgram& program() const { return program_; }
  const SpeciesParams& species() const { return species_; }

 private:
  SpeciesParams species_;
  ControlProgram program_;
  std::vector<ChannelId> channels_;
  std::vector<FieldModel> basis_;
  double moment_;
};

struct EnsembleState {
  std::vector<Vec3> positions;       // m
  std::vector<Vec3> velocities;      // m/s
  std::vector<std::uint8_t> alive;
  std::vector<std::uint8_t> majorana;  // passed below the Majorana threshold at least once
  double mass = 0.0;
  double t = 0.0;

  std::size_t size() const { return positions.size(); }
  std::size_t alive_count() const;
  /// Throws InvalidParameter when the arrays disagree in length.
  void validate() const;
};

/// Named x intervals used to classify atoms: edges[i] .. edges[i + 1] is names[i].
struct BasinEdges {
  std::vector<double> edges;
  std::vector<std::string> names;

  /// Index of the basin containing x, or -1.
  int classify(double x) const;
};

struct Observables {
  double t = 0.0;
  Vec3 com;
  std::array<double, 3> temperature{};  // K, from COM-subtracted velocity variances
  double loss_fraction = 0.0;
  double majorana_fraction = 0.0;
  double mean_energy = 0.0;             // J per alive atom, kinetic plus potential
  std::vector<std::pair<std::string, double>> basins;  // alive fraction of N per basin
  double outside_fraction = 0.0;        // alive but in no basin
};

/// Reductions run in atom order, so results do not depend on how the atoms were propagated.
Observables observe(const EnsembleState& state, const DynamicPotential* potential = nullptr,
                    const BasinEdges& basins = {});
double temperature_from_velocities(const std::vector<double>& v, double mass);

struct SamplingOptions {
  int burn_in = 1000;
  int thinning = 10;
  double step_scale = 1.0;    // proposal width in units of the harmonic widths
  double max_step = 200e-6;   // m, cap for soft directions
  std::optional<double> x_lo; // basin the chain may not leave
  std::optional<double> x_hi;
  DomainBox box{};
  std::optional<Vec3> hop;    // every tenth proposal jumps by +-hop; links separated wells
};

/// Metropolis chain on exp(-U / kT) started at the trap minimum, confined to the basin
/// and box; Maxwell-Boltzmann velocities. The proposal is retuned during burn-in when the
/// acceptance falls below 20 %; below 1 % after retuning is a NoConvergence error.
EnsembleState sample_thermal(const EnergyLandscape& landscape, const TrapCharacterization& trap, double temperature,
                             std::size_t atoms, std::uint64_t seed, const SamplingOptions& options = {});
EnsembleState sample_thermal(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                             const TrapCharacterization& trap, double temperature, std::size_t atoms,
                             std::uint64_t seed, const SamplingOptions& options = {});

struct PropagateOptions {
  double nu_max = 0.0;            // Hz, largest trap frequency met; required
  double dt = 0.0;                // s; 0 selects 1 / (100 nu_max)
  double snapshot_interval = 0.0; // s; 0 records the start and the end only
  DomainBox box{};
  std::optional<double> escape_energy;  // J; atoms above it are lost
  double majorana_threshold = 0.1 * units::gauss;
  BasinEdges basins;
  int threads = 1;
};

inline constexpr double kDefaultStepsPerPeriod = 100.0;
inline constexpr double kMinStepsPerPeriod = 50.0;

struct Trajectory {
  std::vector<Observables> snapshots;
  EnsembleState final_state;
  double dt = 0.0;
  long long steps = 0;
};

/// Velocity Verlet from state.t to t_end; both force evaluations of a step use the control
/// frozen at the step's midpoint. The step is shortened so the interval holds a whole
/// number of steps. Throws InvalidParameter when dt exceeds 1 / (50 nu_max) and
/// SingularityError when an atom reaches a wire.
Trajectory propagate(const EnsembleState& state, const DynamicPotential& potential, double t_end,
                     const PropagateOptions& options);

/// Largest trap frequency of the trap followed through `samples` instants of the program.
double max_trap_frequency(const ChipLayout& layout, const SpeciesParams& species, const ControlProgram& program,
                          const Vec3& seed, int samples = 16);

/// CSV: t, com, per-axis temperature, loss, majorana, energy, then one column per basin.
std::string observables_csv(const std::vector<Observables>& snapshots);
/// Binary phase-space dump: uint64 N, then N rows of x, y, z, vx, vy, vz as little-endian doubles.
void write_phase_space(const EnsembleState& state, const std::filesystem::path& path);
EnsembleState read_phase_space(const std::filesystem::path& path, double mass);

struct QuadraticFit {
  double c = 0.0;        // coefficient of v^2
  double c_error = 0.0;  // standard error
  double r2 = 0.0;
};

/// Least squares y = c x^2 through the origin. R^2 is taken about the mean of y.
QuadraticFit fit_quadratic(const std::vector<double>& x, const std::vector<double>& y);

struct HeatingParams {
  double distance = 3.2e-3;
  double ramp_distance = 0.8e-3;
  double temperature = 5e-6;
  std::size_t atoms = 400;
  std::uint64_t seed = 1;
  Vec3 trap_seed{0.36e-3, 0.0, 250e-6};  // a well at phase zero
  double hold = 0.02;                    // s, temperature averaging window before and after
  double hold_sample = 1e-3;             // s between averaged snapshots
  int threads = 1;
  double steps_per_period = kDefaultStepsPerPeriod;
};

struct TransportRun {
  double v_max = 0.0;
  std::array<double, 3> delta_t{};  // K, hold average after minus hold average before
  double loss_fraction = 0.0;
  double duration = 0.0;
};

/// Thermal ensemble at the phase-zero well, moved by `law` and held at the end. Both
/// temperatures are averages over a static hold.
struct TransportHeating {
  std::array<double, 3> before{};
  std::vector<TransportRun> runs;
};

/// One ensemble, sampled once and moved by each law in turn.
TransportHeating transport_heating(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                                   const std::vector<PhaseLaw>& laws, const HeatingParams& params = {});

struct HeatingScan {
  std::array<double, 3> before{};
  std::vector<TransportRun> runs;
  std::array<QuadraticFit, 3> fit{};  // per axis, in K per (m/s)^2
};

/// Transports one thermal ensemble over `distance` with the piecewise phase law at each
/// v_max (same initial atoms for every run) and fits the per-axis heating.
HeatingScan heating_scan(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                         const std::vector<double>& v_max, const HeatingParams& params = {});

struct SplitMergeParams {
  ConveyorParams conveyor{};
  double temperature = 10e-6;
  std::size_t atoms = 400;
  std::uint64_t seed = 1;
  double phi_merged = units::pi;
  double phi_split = -0.5 * units::pi;
  std::optional<Schedule> schedule;  // phase schedule; the H2 formula when empty
  double half_cycle = 0.45;       // s per split or merge; a quarter of the conveyor rate
  double hold = 0.02;             // s, temperature averaging window at the merged phase
  double hold_sample = 1e-3;      // s between averaged snapshots
  Mat3 gradient{};                // ambient gradient for asymmetry runs
  Vec3 trap_seed{4.95e-3, 0.0, 200e-6};
  double window_lo = 3.9e-3;      // x window holding both split wells
  double window_hi = 5.5e-3;
  int threads = 1;
  double steps_per_period = kDefaultStepsPerPeriod;
};

struct CycleResult {
  int cycle = 0;                        // 0 is the initial merged cloud
  std::array<double, 3> temperature{};  // K, averaged over the hold
  double split_left_fraction = 0.0;     // left-well share of alive atoms at the split phase
  double loss_fraction = 0.0;
};

/// Splits (phase run backwards) and merges (forwards) a thermal cloud at the H2 well,
/// holding after every merge to average the temperature.
std::vector<CycleResult> split_merge_cycles(const ChipLayout& layout, const SpeciesParams& species,
                                            int cycles, const SplitMergeParams& params = {});

struct DoubleWellSplitParams {
  SplitParams split{};
  double temperature = 1e-6;
  std::size_t atoms = 10000;
  std::uint64_t seed = 1;
  double duration = 0.05;  // s
  Mat3 gradient{};
  double window_lo = 1.3e-3;
  double window_hi = 1.7e-3;
  Vec3 trap_seed{1.5e-3, 0.0, 120e-6};
  int threads = 1;
  double steps_per_period = kDefaultStepsPerPeriod;
};

struct DoubleWellSplitResult {
  double left_fraction = 0.0;  // of alive atoms
  double loss_fraction = 0.0;
  double saddle_x = 0.0;
};

/// Thermal ensemble of the final split configuration sampled over both wells, counted on
/// either side of the saddle. Equal Boltzmann weights make this 50/50.
DoubleWellSplitResult equilibrium_split(const ChipLayout& layout, const SpeciesParams& species,
                                        const DoubleWellSplitParams& params = {});

/// Ramps the central current of the BEC split configuration with a thermal cloud and
/// counts the atoms on either side of the final saddle.
DoubleWellSplitResult split_double_well(const ChipLayout& layout, const SpeciesParams& species,
                                        const DoubleWellSplitParams& params = {});

struct DispenseParams {
  DispenserParams dispenser{};
  double omega = 2.0 * units::pi / 0.150;  // rad/s
  double temperature = 10e-6;
  std::size_t atoms = 1000;
  std::uint64_t seed = 1;
  Vec3 trap_seed{-1.2e-3, 0.0, 240e-6};
  double reservoir_lo = -2.4e-3;  // x range the reservoir sample may occupy
  double reservoir_hi = -0.4e-3;
  Vec3 pinch_seed{-150e-6, 0.0, 240e-6};  // newest conveyor well at pinch-off
  double well_spacing = 800e-6;           // the last bin's basin ends within this
  DomainBox box{{-4.0e-3, -1.0e-3, 5e-6}, {6.6e-3, 1.0e-3, 2.0e-3}};  // includes the reservoir section
  int threads = 1;
  double steps_per_period = kDefaultStepsPerPeriod;
};

struct DispenseResult {
  std::vector<double> bins;  // fraction of N per plan period, in plan order
  double reservoir = 0.0;
  double loss_fraction = 0.0;
  double other = 0.0;        // alive atoms in neither the reservoir nor a bin
  std::vector<double> bin_positions;  // m, final x of each bin's well
  double extracted() const;
};

DispenseResult dispense(const ChipLayout& layout, const SpeciesParams& species, const std::vector<BinAction>& plan,
                        const DispenseParams& params = {});

}  // namespace chiptrap

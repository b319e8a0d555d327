#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chiptrap/dynamics.hpp"
#include "chiptrap/geometry.hpp"
#include "chiptrap/optimizer.hpp"
#include "chiptrap/sensitivity.hpp"
#include "chiptrap/waveforms.hpp"

namespace chiptrap {

enum class Dimension {
  None, Length, Current, Field, Gradient, Time, Temperature, Velocity, Frequency, Angle, AngularRate, Mass,
  Acceleration
};

/// SI factor of a unit string for the given dimension. Throws InvalidParameter for units
/// of another dimension or unknown units.
double unit_factor(const std::string& unit, Dimension dim);
/// SI unit name used when writing a dimension back out.
std::string si_unit(Dimension dim);
/// Dimension expected for a scenario key; None for plain numbers and structural keys.
/// `parent` disambiguates children of maps such as "currents".
Dimension key_dimension(const std::string& key, const std::string& parent = "");

/// Replaces every {"value", "unit"} node with SI numbers, checking the unit against the key.
/// A bare number under a dimensional key is an error. Throws ParseError with the JSON path.
nlohmann::json to_si(const nlohmann::json& tagged);
/// Inverse of to_si: every dimensional number is written as {"value", "unit": SI}.
nlohmann::json to_tagged(const nlohmann::json& si);

/// Instant within a schedule's domain.
struct Instant {
  ScheduleVariable variable = ScheduleVariable::Phase;
  double value = 0.0;
};

struct CloudConfig {
  Vec3 position;                 // seed of the trap the cloud is loaded into
  double temperature = 2e-6;
  std::size_t atoms = 200;
  std::optional<double> x_lo;    // basin the sample may occupy
  std::optional<double> x_hi;
};

/// One piece of a control program built on the scenario schedule.
struct ProgramSegment {
  enum class Kind { Law, Sweep, Ramp, Hold };
  Kind kind = Kind::Law;
  PhaseLaw law;           // Law
  double from = 0.0;      // Sweep: phases; Ramp: fractions; Hold: the instant held
  double to = 0.0;
  double duration = 0.0;  // Sweep, Ramp, Hold
};

struct FrameConfig {
  char projection = 'y';          // integration axis
  int nx = 400;                   // horizontal pixels
  int nz = 200;                   // vertical pixels
  double pixel = 10e-6;           // m
  double center_h = 2.3e-3;       // m, image centre on the horizontal axis
  double center_v = 250e-6;       // m, image centre on the vertical axis
  double blur = 0.0;              // m, Gaussian sigma
  double tof = 0.0;               // s of ballistic flight with gravity before imaging

  void validate() const;
};

struct EnsembleConfig {
  std::vector<CloudConfig> clouds;
  std::vector<ProgramSegment> program;
  double snapshot_interval = 0.0;
  std::optional<double> nu_max;   // Hz; followed along the program when absent
  double dt = 0.0;                // s; 0 selects from nu_max
  double steps_per_period = kDefaultStepsPerPeriod;
  double gradient_x = 0.0;        // T/m, ambient dB_x/dx
  DomainBox box{};
};

struct AnalyzeConfig {
  std::vector<Instant> at;
  double x_lo = -1.0e-3;
  double x_hi = 5.6e-3;
  double x_step = 100e-6;
  std::vector<double> z_seeds{150e-6, 300e-6};
  bool depth = false;
};

struct ProfileConfig {
  std::vector<Instant> at;
  double x_lo = -1.0e-3;
  double x_hi = 5.6e-3;
  int samples = 331;
  double seed_z = 250e-6;
  int schedule_samples = 65;
};

struct OptimizeConfig {
  std::string mode = "height";   // height | full | merge_balance
  int knots = 32;
  std::string knob = "I0";       // height mode: I0 or By
  std::optional<double> z_ref;
  double z_tol = 1e-6;
  Vec3 trap_seed{2.4e-3, 0.0, 250e-6};
  // full mode
  double z = 260e-6;
  double x_tol = 1e-6;
  double nu_x = 60.0;
  double nu_x_tol = 1.5;
  double nu_z = 400.0;
  double nu_z_tol = 2.5;
  double period = 800e-6;
  std::vector<Knob> free_knobs{"Bx", "By", "IM1", "IM2"};
  // merge_balance mode
  double temperature = 2e-6;
};

struct SimulateConfig {
  std::string experiment = "ensemble";  // ensemble | transport | split_merge | double_well | dispense
  EnsembleConfig ensemble;
  double temperature = 5e-6;
  std::size_t atoms = 400;
  std::optional<Vec3> trap_seed;
  int cycles = 5;
  double half_cycle = 0.45;
  double duration = 0.05;
  double gradient_x = 0.0;
  double omega = 2.0 * units::pi / 0.150;
};

struct ScanConfig {
  std::vector<double> v_max{0.01, 0.02, 0.03, 0.04};
  double distance = 3.2e-3;
  double ramp_distance = 0.8e-3;
  double temperature = 5e-6;
  std::size_t atoms = 400;
  std::optional<Vec3> trap_seed;
};

struct SensitivityConfig {
  std::optional<Instant> at;
  std::optional<ControlVector> control;  // replaces the schedule when given
  Vec3 trap_seed{4.4e-3, 0.0, 80e-6};
  NoiseModel noise;
  std::size_t samples = 400;
};

struct FramesConfig {
  EnsembleConfig ensemble;
  std::vector<double> times;
  FrameConfig frame;
};

struct LayoutSource {
  std::string kind = "canonical";  // canonical | file
  std::filesystem::path file;
  std::optional<double> strip_width;
  int strands = 7;
};

/// Schedule description. Analytic forms carry SI parameters; "table" reads a schedule
/// document; "merge_balanced" and "height_optimized" are solved when first needed.
struct ScheduleSource {
  std::string form = "basic_conveyor";
  nlohmann::json params = nlohmann::json::object();
  std::filesystem::path file;
  std::optional<double> temperature;  // merge_balanced
  int knots = 32;                     // height_optimized
  std::string knob = "I0";            // height_optimized
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  SpeciesParams species = SpeciesParams::rb87();
  LayoutSource layout;
  ScheduleSource schedule;
  std::optional<PhaseLaw> phase_law;
  std::optional<AnalyzeConfig> analyze;
  std::optional<ProfileConfig> profile;
  std::optional<OptimizeConfig> optimize;
  std::optional<SimulateConfig> simulate;
  std::optional<ScanConfig> scan;
  std::optional<SensitivityConfig> sensitivity;
  std::optional<FramesConfig> frames;
  std::filesystem::path base_dir;     // relative file references resolve here
  nlohmann::json si;                  // the validated document in SI units

  /// Unit-tagged document equivalent to the parsed input.
  nlohmann::json to_json() const;
};

/// Parses a unit-tagged scenario. Throws ParseError naming the offending JSON path.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
Scenario parse_scenario_text(const std::string& text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

ChipLayout build_layout(const Scenario& scenario);
/// Builds (and, for solved forms, computes) the scenario schedule.
Schedule build_schedule(const Scenario& scenario, const ChipLayout& layout, int threads = 1);
/// Program made of the segments applied to `schedule`, with the ambient gradient.
ControlProgram build_program(const Schedule& schedule, const EnsembleConfig& config);

}  // namespace chiptrap

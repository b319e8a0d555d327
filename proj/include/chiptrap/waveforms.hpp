#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "chiptrap/field.hpp"
#include "chiptrap/units.hpp"

namespace chiptrap {

/// What a schedule is parameterized by. Fraction schedules run over s in [0, 1] and are
/// stretched to a duration by the caller.
enum class ScheduleVariable { Phase, Time, Fraction };

std::string to_string(ScheduleVariable v);
ScheduleVariable schedule_variable_from_string(const std::string& s);

/// Mapping from phase, time or ramp fraction to a ControlVector. Analytic schedules keep
/// their form name and parameters so they serialize losslessly; tables interpolate knots
/// linearly (order 1) or with Catmull-Rom cubics (order 3).
class Schedule {
 public:
  using Evaluator = std::function<ControlVector(double)>;

  /// Builds one of the named analytic forms (basic_conveyor, merge_h2, split_bec,
  /// dispenser, constant) from SI parameters. Throws InvalidParameter for unknown forms.
  static Schedule analytic(const std::string& form, const nlohmann::json& params);
  /// Knots must be strictly increasing. A periodic table wraps around [front, back]; a
  /// single-knot table is constant everywhere.
  static Schedule table(ScheduleVariable variable, std::vector<double> knots,
                        std::vector<ControlVector> values, int order = 1, bool periodic = false);

  /// Throws InvalidParameter outside the domain.
  ControlVector at(double s) const;

  ScheduleVariable variable() const { return variable_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  bool is_table() const { return form_ == "table"; }
  const std::string& form() const { return form_; }
  const nlohmann::json& params() const { return params_; }
  /// Channels carrying current anywhere in the schedule (sampled for analytic forms).
  std::vector<ChannelId> channels() const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<ControlVector>& values() const { return values_; }
  int order() const { return order_; }
  bool periodic() const { return periodic_; }

  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& doc);

 private:
  Schedule() = default;
  ControlVector interpolate(double s) const;

  std::string form_;
  nlohmann::json params_;
  ScheduleVariable variable_ = ScheduleVariable::Phase;
  double lo_ = -std::numeric_limits<double>::infinity();
  double hi_ = std::numeric_limits<double>::infinity();
  Evaluator eval_;
  std::vector<double> knots_;
  std::vector<ControlVector> values_;
  int order_ = 1;
  bool periodic_ = false;
};

/// CSV of n equally spaced samples over [lo, hi]: variable, channel currents (A), bias (T).
std::string schedule_csv(const Schedule& schedule, double lo, double hi, int n);

struct ConveyorParams {
  ChannelId central_channel = "I0";
  double central_current = 2.0;  // A
  double amplitude = 1.0;        // A
  Vec3 bias{7.0 * units::gauss, 16.0 * units::gauss, 0.0};
};

/// (I_M1, I_M2) = amplitude (cos phi, -sin phi) with the central wire and bias held.
ControlVector basic_conveyor(double phi, const ConveyorParams& params = {});
Schedule basic_conveyor_schedule(const ConveyorParams& params = {});

/// H2 current for merging at the conveyor end, A.
double merge_schedule_h2(double phi);
/// basic_conveyor plus I_H2(phi).
Schedule merge_schedule(const ConveyorParams& params = {});

struct SplitParams {
  double i0_start = 1.95;
  double i0_end = 1.4;
  double im1 = -0.283;
  double im2 = -0.282;
  Vec3 bias{3.0 * units::gauss, 25.0 * units::gauss, 0.0};
};

/// Linear I0 ramp over s in [0, 1], meanders and bias fixed.
ControlVector split_ramp_bec(double s, const SplitParams& params = {});
Schedule split_bec_schedule(const SplitParams& params = {});

/// One conveyor period of the dispenser: either load with the given H1 current or skip.
struct BinAction {
  bool load = true;
  double ih1 = 0.0;  // A, ignored for skips

  static BinAction load_with(double amps) { return {true, amps}; }
  static BinAction skip() { return {false, 0.0}; }
};

struct DispenserParams {
  double i1 = 1.95;
  double iq = -1.2;
  double amplitude = 1.0;
  Vec3 bias{9.0 * units::gauss, 16.0 * units::gauss, 0.0};
  double ih1_initial = 0.3;   // A, the reservoir preparation value
  double skip_current = 0.8;  // A
  double ramp_fraction = 0.1; // of a period, at its start
};

/// Meanders follow amplitude (sin phi, cos phi); bin k occupies phi in [2 pi k, 2 pi (k+1)]
/// and I_H1 ramps linearly to its target over the first ramp_fraction of that period.
Schedule dispenser_schedule(const std::vector<BinAction>& plan, const DispenserParams& params = {});
/// Target H1 current of each period.
std::vector<double> dispenser_targets(const std::vector<BinAction>& plan, const DispenserParams& params = {});

enum class LoadingKind { Compress, TransferToConveyor, DirectLoad };

/// Time tables (order 1) of the loading sequences.
Schedule loading_ramp(LoadingKind kind);
LoadingKind loading_kind_from_string(const std::string& s);

/// Blackman velocity pulse moving `distance` in time T; zero at both ends.
double blackman_velocity(double t, double T, double distance);
/// Distance covered by time t of the same pulse.
double blackman_distance(double t, double T, double distance);

/// Conveyor phase as a function of time. Phase and position are related by the conveyor
/// period (2 pi per `period`).
struct PhaseLaw {
  enum class Kind { Linear, Blackman, ConcatenatedBlackman, Piecewise };

  Kind kind = Kind::Linear;
  double omega = 2.0 * units::pi / 0.150;  // rad/s, linear
  double duration = std::numeric_limits<double>::infinity();  // s; linear laws may be unbounded
  double distance = 0.0;         // m, Blackman kinds and piecewise
  double v_max = 0.0;            // m/s, piecewise
  double ramp_distance = 0.8e-3; // m, piecewise
  double period = 800e-6;        // m per 2 pi
  double phi0 = 0.0;

  static PhaseLaw linear(double omega, double duration = std::numeric_limits<double>::infinity());
  /// One Blackman pulse of duration T.
  static PhaseLaw blackman(double T, double distance);
  /// Accelerating half followed by decelerating half, each lasting T_half; equal to a
  /// single pulse of duration 2 T_half.
  static PhaseLaw concatenated_blackman(double T_half, double distance);
  /// Blackman half-pulse ramps over the first and last ramp_distance, constant v_max between.
  static PhaseLaw piecewise(double v_max, double distance, double ramp_distance = 0.8e-3);

  /// Throws InvalidParameter for t outside [0, end_time()].
  double phase(double t) const;
  double rate(double t) const;
  double velocity(double t) const { return rate(t) * period / (2.0 * units::pi); }
  double end_time() const;

  nlohmann::json to_json() const;
  static PhaseLaw from_json(const nlohmann::json& doc);

 private:
  double piecewise_ramp_time() const;
  double position(double t) const;
  double speed(double t) const;
};

/// ControlVector <-> JSON in SI units: {"currents": {...}, "bias": [x, y, z]}.
nlohmann::json control_to_json(const ControlVector& ctrl);
ControlVector control_from_json(const nlohmann::json& doc);

/// Parameter blocks of the split and dispenser schedules, SI units, missing keys keep defaults.
SplitParams split_from_json(const nlohmann::json& doc);
void dispenser_from_json(const nlohmann::json& doc, std::vector<BinAction>& plan, DispenserParams& params);

}  // namespace chiptrap

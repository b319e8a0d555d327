#include "chiptrap/waveforms.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "chiptrap/errors.hpp"

namespace chiptrap {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * units::pi;

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InvalidParameter(what + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

double number(const json& params, const char* key, double fallback) {
  if (!params.contains(key)) return fallback;
  if (!params[key].is_number()) throw InvalidParameter(std::string("parameter '") + key + "' must be a number");
  return params[key].get<double>();
}

json conveyor_to_json(const ConveyorParams& p) {
  return {{"central_channel", p.central_channel},
          {"central_current", p.central_current},
          {"amplitude", p.amplitude},
          {"bias", vec_to_json(p.bias)}};
}

ConveyorParams conveyor_from_json(const json& j) {
  ConveyorParams p;
  if (j.contains("central_channel")) p.central_channel = j["central_channel"].get<std::string>();
  p.central_current = number(j, "central_current", p.central_current);
  p.amplitude = number(j, "amplitude", p.amplitude);
  if (j.contains("bias")) p.bias = vec_from_json(j["bias"], "bias");
  return p;
}

json split_to_json(const SplitParams& p) {
  return {{"i0_start", p.i0_start}, {"i0_end", p.i0_end}, {"im1", p.im1}, {"im2", p.im2}, {"bias", vec_to_json(p.bias)}};
}


json dispenser_to_json(const std::vector<BinAction>& plan, const DispenserParams& p) {
  json bins = json::array();
  for (const auto& b : plan) {
    if (b.load)
      bins.push_back({{"action", "load"}, {"ih1", b.ih1}});
    else
      bins.push_back({{"action", "skip"}});
  }
  return {{"bins", bins},
          {"i1", p.i1},
          {"iq", p.iq},
          {"amplitude", p.amplitude},
          {"bias", vec_to_json(p.bias)},
          {"ih1_initial", p.ih1_initial},
          {"skip_current", p.skip_current},
          {"ramp_fraction", p.ramp_fraction}};
}


ControlVector dispenser_at(double phi, const std::vector<double>& targets, const DispenserParams& p) {
  const int n = static_cast<int>(targets.size());
  int k = static_cast<int>(std::floor(phi / kTwoPi));
  k = std::clamp(k, 0, n - 1);
  const double frac = phi / kTwoPi - k;
  const double prev = k == 0 ? p.ih1_initial : targets[k - 1];
  double ih1 = targets[k];
  if (p.ramp_fraction > 0.0 && frac < p.ramp_fraction) ih1 = prev + (targets[k] - prev) * frac / p.ramp_fraction;
  ControlVector c;
  c.set("I1", p.i1);
  c.set("IQ", p.iq);
  c.set("IM1", p.amplitude * std::sin(phi));
  c.set("IM2", p.amplitude * std::cos(phi));
  c.set("IH1", ih1);
  c.bias = p.bias;
  return c;
}

// Flattened table values: one row per knot, columns = channels then bias x, y, z.
struct FlatTable {
  std::vector<ChannelId> channels;
  std::vector<std::vector<double>> rows;
};

FlatTable flatten(const std::vector<ControlVector>& values) {
  FlatTable t;
  std::set<ChannelId> names;
  for (const auto& v : values)
    for (const auto& [ch, _] : v.currents) names.insert(ch);
  t.channels.assign(names.begin(), names.end());
  for (const auto& v : values) {
    std::vector<double> row;
    for (const auto& ch : t.channels) row.push_back(v.current(ch));
    row.push_back(v.bias.x);
    row.push_back(v.bias.y);
    row.push_back(v.bias.z);
    t.rows.push_back(std::move(row));
  }
  return t;
}

ControlVector unflatten(const std::vector<ChannelId>& channels, const std::vector<double>& row) {
  ControlVector c;
  for (std::size_t i = 0; i < channels.size(); ++i) c.set(channels[i], row[i]);
  const std::size_t b = channels.size();
  c.bias = {row[b], row[b + 1], row[b + 2]};
  return c;
}

}  // namespace

SplitParams split_from_json(const json& j) {
  SplitParams p;
  p.i0_start = number(j, "i0_start", p.i0_start);
  p.i0_end = number(j, "i0_end", p.i0_end);
  p.im1 = number(j, "im1", p.im1);
  p.im2 = number(j, "im2", p.im2);
  if (j.contains("bias")) p.bias = vec_from_json(j["bias"], "bias");
  return p;
}

void dispenser_from_json(const json& j, std::vector<BinAction>& plan, DispenserParams& p) {
  if (!j.contains("bins") || !j["bins"].is_array()) throw InvalidParameter("dispenser needs a 'bins' array");
  plan.clear();
  for (const auto& b : j["bins"]) {
    const std::string action = b.value("action", "");
    if (action == "load")
      plan.push_back(BinAction::load_with(number(b, "ih1", 0.0)));
    else if (action == "skip")
      plan.push_back(BinAction::skip());
    else
      throw InvalidParameter("bin action must be 'load' or 'skip', got '" + action + "'");
  }
  p.i1 = number(j, "i1", p.i1);
  p.iq = number(j, "iq", p.iq);
  p.amplitude = number(j, "amplitude", p.amplitude);
  if (j.contains("bias")) p.bias = vec_from_json(j["bias"], "bias");
  p.ih1_initial = number(j, "ih1_initial", p.ih1_initial);
  p.skip_current = number(j, "skip_current", p.skip_current);
  p.ramp_fraction = number(j, "ramp_fraction", p.ramp_fraction);
}

std::string to_string(ScheduleVariable v) {
  switch (v) {
    case ScheduleVariable::Phase: return "phase";
    case ScheduleVariable::Time: return "time";
    case ScheduleVariable::Fraction: return "fraction";
  }
  return "phase";
}

ScheduleVariable schedule_variable_from_string(const std::string& s) {
  if (s == "phase") return ScheduleVariable::Phase;
  if (s == "time") return ScheduleVariable::Time;
  if (s == "fraction") return ScheduleVariable::Fraction;
  throw InvalidParameter("schedule variable must be phase, time or fraction, got '" + s + "'");
}

json control_to_json(const ControlVector& ctrl) {
  json cur = json::object();
  for (const auto& [ch, v] : ctrl.currents) cur[ch] = v;
  json out = {{"currents", cur}, {"bias", vec_to_json(ctrl.bias)}};
  bool has_gradient = false;
  for (const auto& row : ctrl.gradient)
    for (double v : row) has_gradient = has_gradient || v != 0.0;
  if (has_gradient) {
    json g = json::array();
    for (const auto& row : ctrl.gradient) g.push_back(json::array({row[0], row[1], row[2]}));
    out["gradient"] = g;
  }
  return out;
}

ControlVector control_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidParameter("control vector must be an object");
  ControlVector c;
  if (doc.contains("currents")) {
    if (!doc["currents"].is_object()) throw InvalidParameter("'currents' must be an object");
    for (const auto& [ch, v] : doc["currents"].items()) {
      if (!v.is_number()) throw InvalidParameter("current of " + ch + " must be a number");
      c.set(ch, v.get<double>());
    }
  }
  if (doc.contains("bias")) c.bias = vec_from_json(doc["bias"], "bias");
  if (doc.contains("gradient")) {
    const auto& g = doc["gradient"];
    if (!g.is_array() || g.size() != 3) throw InvalidParameter("gradient must be a 3x3 array");
    for (int i = 0; i < 3; ++i) {
      const Vec3 r = vec_from_json(g[i], "gradient row");
      c.gradient[i] = {r.x, r.y, r.z};
    }
  }
  return c;
}

Schedule Schedule::analytic(const std::string& form, const json& params) {
  Schedule s;
  s.form_ = form;
  s.params_ = params.is_null() ? json::object() : params;
  if (form == "basic_conveyor") {
    const ConveyorParams p = conveyor_from_json(s.params_);
    s.eval_ = [p](double phi) { return basic_conveyor(phi, p); };
  } else if (form == "merge_h2") {
    const ConveyorParams p = conveyor_from_json(s.params_);
    s.eval_ = [p](double phi) {
      ControlVector c = basic_conveyor(phi, p);
      c.set("IH2", merge_schedule_h2(phi));
      return c;
    };
  } else if (form == "split_bec") {
    const SplitParams p = split_from_json(s.params_);
    s.variable_ = ScheduleVariable::Fraction;
    s.lo_ = 0.0;
    s.hi_ = 1.0;
    s.eval_ = [p](double x) { return split_ramp_bec(x, p); };
  } else if (form == "dispenser") {
    std::vector<BinAction> plan;
    DispenserParams p;
    dispenser_from_json(s.params_, plan, p);
    if (plan.empty()) throw InvalidParameter("dispenser plan is empty");
    if (p.ramp_fraction < 0.0 || p.ramp_fraction > 1.0)
      throw InvalidParameter("dispenser ramp fraction must lie in [0, 1]");
    const std::vector<double> targets = dispenser_targets(plan, p);
    s.lo_ = 0.0;
    s.hi_ = kTwoPi * static_cast<double>(plan.size());
    s.eval_ = [targets, p](double phi) { return dispenser_at(phi, targets, p); };
  } else if (form == "constant") {
    if (!s.params_.contains("control")) throw InvalidParameter("constant schedule needs 'control'");
    const ControlVector c = control_from_json(s.params_["control"]);
    s.variable_ = schedule_variable_from_string(s.params_.value("variable", "time"));
    s.eval_ = [c](double) { return c; };
  } else {
    throw InvalidParameter("unknown analytic schedule form '" + form + "'");
  }
  return s;
}

Schedule Schedule::table(ScheduleVariable variable, std::vector<double> knots, std::vector<ControlVector> values,
                         int order, bool periodic) {
  if (knots.empty() || knots.size() != values.size())
    throw InvalidParameter("table needs equally many knots and values (at least one)");
  if (order != 1 && order != 3) throw InvalidParameter("table interpolation order must be 1 or 3");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1])) throw InvalidParameter("table knots must be strictly increasing");
  for (double k : knots)
    if (!std::isfinite(k)) throw InvalidParameter("table knots must be finite");
  if (periodic && knots.size() < 2) throw InvalidParameter("a periodic table needs at least two knots");
  Schedule s;
  s.form_ = "table";
  s.params_ = json::object();
  s.variable_ = variable;
  s.knots_ = std::move(knots);
  s.values_ = std::move(values);
  s.order_ = order;
  s.periodic_ = periodic;
  // a single knot is constant everywhere
  if (!periodic && s.knots_.size() > 1) {
    s.lo_ = s.knots_.front();
    s.hi_ = s.knots_.back();
  }
  const FlatTable flat = flatten(s.values_);
  s.eval_ = [flat, k = s.knots_, order, periodic](double x) {
    const std::size_t n = k.size();
    if (n == 1) return unflatten(flat.channels, flat.rows[0]);
    const double period = k.back() - k.front();
    if (periodic) {
      x = k.front() + std::fmod(x - k.front(), period);
      if (x < k.front()) x += period;
    }
    std::size_t i = static_cast<std::size_t>(std::upper_bound(k.begin(), k.end(), x) - k.begin());
    i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
    const double h = k[i + 1] - k[i];
    const double u = (x - k[i]) / h;
    const std::size_t m = flat.rows[0].size();
    std::vector<double> row(m);
    if (order == 1) {
      for (std::size_t c = 0; c < m; ++c) row[c] = (1.0 - u) * flat.rows[i][c] + u * flat.rows[i + 1][c];
      return unflatten(flat.channels, row);
    }
    // Cubic Hermite with three-point slopes on the non-uniform grid.
    auto slope = [&](std::size_t j, std::size_t c) {
      bool has_prev = j > 0;
      bool has_next = j + 1 < n;
      double y_prev = 0, h_prev = 0, y_next = 0, h_next = 0;
      if (has_prev) {
        y_prev = flat.rows[j - 1][c];
        h_prev = k[j] - k[j - 1];
      } else if (periodic) {
        y_prev = flat.rows[n - 2][c];
        h_prev = k[n - 1] - k[n - 2];
        has_prev = true;
      }
      if (has_next) {
        y_next = flat.rows[j + 1][c];
        h_next = k[j + 1] - k[j];
      } else if (periodic) {
        y_next = flat.rows[1][c];
        h_next = k[1] - k[0];
        has_next = true;
      }
      const double y = flat.rows[j][c];
      if (has_prev && has_next) {
        const double dl = (y - y_prev) / h_prev;
        const double dr = (y_next - y) / h_next;
        return (dl * h_next + dr * h_prev) / (h_prev + h_next);
      }
      if (has_next) return (y_next - y) / h_next;
      return (y - y_prev) / h_prev;
    };
    const double h00 = (1 + 2 * u) * (1 - u) * (1 - u);
    const double h10 = u * (1 - u) * (1 - u);
    const double h01 = u * u * (3 - 2 * u);
    const double h11 = u * u * (u - 1);
    for (std::size_t c = 0; c < m; ++c)
      row[c] = h00 * flat.rows[i][c] + h10 * h * slope(i, c) + h01 * flat.rows[i + 1][c] + h11 * h * slope(i + 1, c);
    return unflatten(flat.channels, row);
  };
  return s;
}

ControlVector Schedule::at(double s) const {
  if (!std::isfinite(s)) throw InvalidParameter("schedule evaluated at a non-finite point");
  if (s < lo_ || s > hi_) {
    std::ostringstream msg;
    msg << "schedule '" << form_ << "' evaluated at " << s << " outside [" << lo_ << ", " << hi_ << "]";
    throw InvalidParameter(msg.str());
  }
  return eval_(s);
}

std::vector<ChannelId> Schedule::channels() const {
  std::set<ChannelId> names;
  if (is_table()) {
    for (const auto& v : values_)
      for (const auto& [ch, _] : v.currents) names.insert(ch);
  } else {
    const double a = std::isfinite(lo_) ? lo_ : 0.0;
    const double b = std::isfinite(hi_) ? hi_ : kTwoPi;
    for (int i = 0; i <= 64; ++i)
      for (const auto& [ch, _] : at(a + (b - a) * i / 64.0).currents) names.insert(ch);
  }
  return {names.begin(), names.end()};
}

json Schedule::to_json() const {
  if (!is_table()) return {{"kind", "analytic"}, {"form", form_}, {"params", params_}};
  json values = json::array();
  for (const auto& v : values_) values.push_back(control_to_json(v));
  return {{"kind", "table"},     {"variable", to_string(variable_)}, {"order", order_},
          {"periodic", periodic_}, {"knots", knots_},                 {"values", values}};
}

Schedule Schedule::from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidParameter("schedule must be an object");
  const std::string kind = doc.value("kind", "");
  if (kind == "analytic") {
    if (!doc.contains("form")) throw InvalidParameter("analytic schedule needs 'form'");
    return analytic(doc["form"].get<std::string>(), doc.value("params", json::object()));
  }
  if (kind == "table") {
    if (!doc.contains("knots") || !doc.contains("values")) throw InvalidParameter("table schedule needs knots and values");
    std::vector<double> knots = doc["knots"].get<std::vector<double>>();
    std::vector<ControlVector> values;
    for (const auto& v : doc["values"]) values.push_back(control_from_json(v));
    return table(schedule_variable_from_string(doc.value("variable", "phase")), std::move(knots), std::move(values),
                 doc.value("order", 1), doc.value("periodic", false));
  }
  throw InvalidParameter("schedule kind must be 'analytic' or 'table', got '" + kind + "'");
}

std::string schedule_csv(const Schedule& schedule, double lo, double hi, int n) {
  if (n < 2) throw InvalidParameter("need at least two samples");
  const std::vector<ChannelId> channels = schedule.channels();
  std::ostringstream out;
  out.precision(12);
  out << to_string(schedule.variable());
  for (const auto& ch : channels) out << ',' << ch;
  out << ",Bx,By,Bz\n";
  for (int i = 0; i < n; ++i) {
    const double s = lo + (hi - lo) * i / (n - 1);
    const ControlVector c = schedule.at(s);
    out << s;
    for (const auto& ch : channels) out << ',' << c.current(ch);
    out << ',' << c.bias.x << ',' << c.bias.y << ',' << c.bias.z << '\n';
  }
  return out.str();
}

ControlVector basic_conveyor(double phi, const ConveyorParams& params) {
  ControlVector c;
  c.set(params.central_channel, params.central_current);
  c.set("IM1", params.amplitude * std::cos(phi));
  c.set("IM2", -params.amplitude * std::sin(phi));
  c.bias = params.bias;
  return c;
}

Schedule basic_conveyor_schedule(const ConveyorParams& params) {
  return Schedule::analytic("basic_conveyor", conveyor_to_json(params));
}

double merge_schedule_h2(double phi) {
  return 0.462 + 0.255 * std::sin(phi + 0.493) - 0.088 * std::sin(2.0 * phi - 1.482);
}

Schedule merge_schedule(const ConveyorParams& params) {
  return Schedule::analytic("merge_h2", conveyor_to_json(params));
}

ControlVector split_ramp_bec(double s, const SplitParams& params) {
  if (!(s >= 0.0 && s <= 1.0)) throw InvalidParameter("split ramp fraction must lie in [0, 1]");
  ControlVector c;
  c.set("I0", params.i0_start + (params.i0_end - params.i0_start) * s);
  c.set("IM1", params.im1);
  c.set("IM2", params.im2);
  c.bias = params.bias;
  return c;
}

Schedule split_bec_schedule(const SplitParams& params) { return Schedule::analytic("split_bec", split_to_json(params)); }

std::vector<double> dispenser_targets(const std::vector<BinAction>& plan, const DispenserParams& params) {
  std::vector<double> out;
  out.reserve(plan.size());
  for (const auto& b : plan) out.push_back(b.load ? b.ih1 : params.skip_current);
  return out;
}

Schedule dispenser_schedule(const std::vector<BinAction>& plan, const DispenserParams& params) {
  if (plan.empty()) throw InvalidParameter("dispenser plan is empty");
  return Schedule::analytic("dispenser", dispenser_to_json(plan, params));
}

LoadingKind loading_kind_from_string(const std::string& s) {
  if (s == "compress") return LoadingKind::Compress;
  if (s == "transfer_to_conveyor" || s == "transfer") return LoadingKind::TransferToConveyor;
  if (s == "direct_load") return LoadingKind::DirectLoad;
  throw InvalidParameter("loading kind must be compress, transfer_to_conveyor or direct_load, got '" + s + "'");
}

Schedule loading_ramp(LoadingKind kind) {
  const double G = units::gauss;
  auto ctrl = [](std::initializer_list<std::pair<const char*, double>> cur, Vec3 bias) {
    ControlVector c;
    for (const auto& [ch, v] : cur) c.set(ch, v);
    c.bias = bias;
    return c;
  };
  switch (kind) {
    case LoadingKind::Compress:
      return Schedule::table(ScheduleVariable::Time, {0.0, 0.300, 0.400},
                             {ctrl({{"I2", 2.0}}, {0, 8 * G, 0}), ctrl({{"I2", 2.0}}, {0, 55 * G, 0}),
                              ctrl({{"I2", 2.0}}, {0, 40 * G, 0})});
    case LoadingKind::TransferToConveyor:
      return Schedule::table(
          ScheduleVariable::Time, {0.0, 0.100, 0.250},
          {ctrl({{"I1", 0.0}, {"I2", 2.0}, {"IM1", 0.0}, {"IM2", 0.0}}, {0, 55 * G, 0}),
           ctrl({{"I1", 2.0}, {"I2", 0.0}, {"IM1", 0.0}, {"IM2", 1.0}}, {0, 55 * G, 0}),
           ctrl({{"I1", 2.0}, {"I2", 0.0}, {"IM1", 1.0}, {"IM2", 1.0}}, {7 * G, 55 * G, 0})});
    case LoadingKind::DirectLoad:
      return Schedule::table(ScheduleVariable::Time, {0.0, 1.0e-3, 1.1e-3},
                             {ctrl({{"I0", 0.3}, {"IM1", 0.0}, {"IM2", -0.3}}, {0, 1.5 * G, 0}),
                              ctrl({{"I0", 0.3}, {"IM1", 0.0}, {"IM2", -0.3}}, {0, 1.5 * G, 0}),
                              ctrl({{"I0", 2.0}, {"IM1", 1.0}, {"IM2", 0.0}}, {7 * G, 16 * G, 0})});
  }
  throw InvalidParameter("unknown loading kind");
}

double blackman_velocity(double t, double T, double distance) {
  if (!(T > 0.0)) throw InvalidParameter("Blackman pulse duration must be positive");
  if (!(t >= 0.0 && t <= T)) throw InvalidParameter("Blackman pulse evaluated outside [0, T]");
  const double w = kTwoPi * t / T;
  return distance / T * (1.0 - 25.0 / 21.0 * std::cos(w) + 4.0 / 21.0 * std::cos(2.0 * w));
}

double blackman_distance(double t, double T, double distance) {
  if (!(T > 0.0)) throw InvalidParameter("Blackman pulse duration must be positive");
  if (!(t >= 0.0 && t <= T)) throw InvalidParameter("Blackman pulse evaluated outside [0, T]");
  const double w = kTwoPi * t / T;
  return distance / T * (t - 25.0 / 21.0 * T / kTwoPi * std::sin(w) + 4.0 / 21.0 * T / (2.0 * kTwoPi) * std::sin(2.0 * w));
}

PhaseLaw PhaseLaw::linear(double omega, double duration) {
  if (!std::isfinite(omega)) throw InvalidParameter("phase rate must be finite");
  if (!(duration > 0.0)) throw InvalidParameter("phase law duration must be positive");
  PhaseLaw p;
  p.kind = Kind::Linear;
  p.omega = omega;
  p.duration = duration;
  return p;
}

PhaseLaw PhaseLaw::blackman(double T, double distance) {
  if (!(T > 0.0)) throw InvalidParameter("Blackman pulse duration must be positive");
  PhaseLaw p;
  p.kind = Kind::Blackman;
  p.duration = T;
  p.distance = distance;
  return p;
}

PhaseLaw PhaseLaw::concatenated_blackman(double T_half, double distance) {
  if (!(T_half > 0.0)) throw InvalidParameter("Blackman pulse duration must be positive");
  PhaseLaw p;
  p.kind = Kind::ConcatenatedBlackman;
  p.duration = 2.0 * T_half;
  p.distance = distance;
  return p;
}

PhaseLaw PhaseLaw::piecewise(double v_max, double distance, double ramp_distance) {
  if (!(v_max > 0.0)) throw InvalidParameter("piecewise phase law needs a positive v_max");
  if (!(ramp_distance > 0.0) || distance < 2.0 * ramp_distance)
    throw InvalidParameter("piecewise phase law needs distance >= 2 * ramp distance > 0");
  PhaseLaw p;
  p.kind = Kind::Piecewise;
  p.v_max = v_max;
  p.distance = distance;
  p.ramp_distance = ramp_distance;
  p.duration = 2.0 * p.piecewise_ramp_time() + (distance - 2.0 * ramp_distance) / v_max;
  return p;
}

double PhaseLaw::piecewise_ramp_time() const { return 50.0 / 21.0 * ramp_distance / v_max; }

double PhaseLaw::end_time() const { return duration; }

double PhaseLaw::position(double t) const {
  switch (kind) {
    case Kind::Linear:
      return omega * t * period / kTwoPi;
    case Kind::Blackman:
    case Kind::ConcatenatedBlackman:
      return blackman_distance(t, duration, distance);
    case Kind::Piecewise: {
      const double tr = piecewise_ramp_time();
      const double tc = duration - 2.0 * tr;
      if (t <= tr) return blackman_distance(t, 2.0 * tr, 2.0 * ramp_distance);
      if (t <= tr + tc) return ramp_distance + v_max * (t - tr);
      const double tail = std::min(t - tr - tc + tr, 2.0 * tr);
      return distance - 2.0 * ramp_distance + blackman_distance(tail, 2.0 * tr, 2.0 * ramp_distance);
    }
  }
  return 0.0;
}

double PhaseLaw::speed(double t) const {
  switch (kind) {
    case Kind::Linear:
      return omega * period / kTwoPi;
    case Kind::Blackman:
    case Kind::ConcatenatedBlackman:
      return blackman_velocity(t, duration, distance);
    case Kind::Piecewise: {
      const double tr = piecewise_ramp_time();
      const double tc = duration - 2.0 * tr;
      if (t <= tr) return blackman_velocity(t, 2.0 * tr, 2.0 * ramp_distance);
      if (t <= tr + tc) return v_max;
      return blackman_velocity(std::min(t - tc, 2.0 * tr), 2.0 * tr, 2.0 * ramp_distance);
    }
  }
  return 0.0;
}

double PhaseLaw::phase(double t) const {
  if (!(t >= 0.0 && t <= duration)) throw InvalidParameter("phase law evaluated outside [0, duration]");
  if (kind == Kind::Linear) return phi0 + omega * t;
  return phi0 + kTwoPi / period * position(t);
}

double PhaseLaw::rate(double t) const {
  if (!(t >= 0.0 && t <= duration)) throw InvalidParameter("phase law evaluated outside [0, duration]");
  if (kind == Kind::Linear) return omega;
  return kTwoPi / period * speed(t);
}

json PhaseLaw::to_json() const {
  json j = {{"period", period}, {"phi0", phi0}};
  switch (kind) {
    case Kind::Linear:
      j["kind"] = "linear";
      j["omega"] = omega;
      if (std::isfinite(duration)) j["duration"] = duration;
      break;
    case Kind::Blackman:
      j["kind"] = "blackman";
      j["duration"] = duration;
      j["distance"] = distance;
      break;
    case Kind::ConcatenatedBlackman:
      j["kind"] = "concatenated_blackman";
      j["half_duration"] = 0.5 * duration;
      j["distance"] = distance;
      break;
    case Kind::Piecewise:
      j["kind"] = "piecewise";
      j["v_max"] = v_max;
      j["distance"] = distance;
      j["ramp_distance"] = ramp_distance;
      break;
  }
  return j;
}

PhaseLaw PhaseLaw::from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidParameter("phase law must be an object");
  const std::string kind = doc.value("kind", "linear");
  PhaseLaw p;
  if (kind == "linear") {
    p = linear(number(doc, "omega", p.omega), number(doc, "duration", std::numeric_limits<double>::infinity()));
  } else if (kind == "blackman") {
    p = blackman(number(doc, "duration", 0.0), number(doc, "distance", 0.0));
  } else if (kind == "concatenated_blackman") {
    p = concatenated_blackman(number(doc, "half_duration", 0.0), number(doc, "distance", 0.0));
  } else if (kind == "piecewise") {
    p = piecewise(number(doc, "v_max", 0.0), number(doc, "distance", 0.0), number(doc, "ramp_distance", 0.8e-3));
  } else {
    throw InvalidParameter("unknown phase law kind '" + kind + "'");
  }
  p.period = number(doc, "period", p.period);
  if (!(p.period > 0.0)) throw InvalidParameter("conveyor period must be positive");
  p.phi0 = number(doc, "phi0", 0.0);
  return p;
}

}  // namespace chiptrap

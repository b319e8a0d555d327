#include "chiptrap/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "chiptrap/errors.hpp"
#include "chiptrap/log.hpp"

namespace chiptrap {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(s)), static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s)), static_cast<std::uint32_t>(splitmix64(s))};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------------------
// Control programs

namespace {

std::vector<ChannelId> merge_channels(std::vector<ChannelId> a, const std::vector<ChannelId>& b) {
  for (const auto& c : b)
    if (std::find(a.begin(), a.end(), c) == a.end()) a.push_back(c);
  return a;
}

std::vector<ChannelId> channels_of(const ControlVector& c) {
  std::vector<ChannelId> out;
  for (const auto& [ch, v] : c.currents)
    if (v != 0.0) out.push_back(ch);
  return out;
}

void require_duration(double d) {
  if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidParameter("program duration must be finite and non-negative");
}

}  // namespace

ControlProgram ControlProgram::constant(const ControlVector& ctrl, double duration) {
  require_duration(duration);
  return {[ctrl](double) { return ctrl; }, channels_of(ctrl), duration};
}

ControlProgram ControlProgram::phase(const Schedule& schedule, const PhaseLaw& law) {
  if (schedule.variable() != ScheduleVariable::Phase) throw InvalidParameter("phase law needs a phase schedule");
  const double end = law.end_time();
  require_duration(end);
  return {[schedule, law, end](double t) { return schedule.at(law.phase(std::clamp(t, 0.0, end))); },
          schedule.channels(), end};
}

ControlProgram ControlProgram::phase_sweep(const Schedule& schedule, double phi_from, double phi_to,
                                           double duration) {
  if (schedule.variable() != ScheduleVariable::Phase) throw InvalidParameter("phase sweep needs a phase schedule");
  require_duration(duration);
  if (!(duration > 0.0)) throw InvalidParameter("phase sweep duration must be positive");
  return {[schedule, phi_from, phi_to, duration](double t) {
            const double u = std::clamp(t / duration, 0.0, 1.0);
            return schedule.at(phi_from + (phi_to - phi_from) * u);
          },
          schedule.channels(), duration};
}

ControlProgram ControlProgram::ramp(const Schedule& schedule, double duration) {
  if (schedule.variable() != ScheduleVariable::Fraction) throw InvalidParameter("ramp needs a fraction schedule");
  require_duration(duration);
  if (!(duration > 0.0)) throw InvalidParameter("ramp duration must be positive");
  return {[schedule, duration](double t) { return schedule.at(std::clamp(t / duration, 0.0, 1.0)); },
          schedule.channels(), duration};
}

ControlProgram ControlProgram::timed(const Schedule& schedule) {
  if (schedule.variable() != ScheduleVariable::Time) throw InvalidParameter("timed program needs a time schedule");
  const double lo = schedule.lo();
  const double hi = schedule.hi();
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw InvalidParameter("time schedule must be bounded");
  return {[schedule, lo, hi](double t) { return schedule.at(std::clamp(lo + t, lo, hi)); }, schedule.channels(),
          hi - lo};
}

ControlProgram ControlProgram::interpolate(const ControlVector& from, const ControlVector& to, double duration) {
  require_duration(duration);
  if (!(duration > 0.0)) throw InvalidParameter("interpolation duration must be positive");
  return {[from, to, duration](double t) {
            const double u = std::clamp(t / duration, 0.0, 1.0);
            ControlVector c = from;
            for (const auto& [ch, v] : to.currents) c.currents[ch] = (1.0 - u) * from.current(ch) + u * v;
            for (auto& [ch, v] : c.currents)
              if (!to.currents.count(ch)) v = (1.0 - u) * from.current(ch);
            c.bias = (1.0 - u) * from.bias + u * to.bias;
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) c.gradient[i][j] = (1.0 - u) * from.gradient[i][j] + u * to.gradient[i][j];
            return c;
          },
          merge_channels(channels_of(from), channels_of(to)), duration};
}

ControlProgram ControlProgram::then(const ControlProgram& next) const {
  const ControlProgram first = *this;
  const double d = duration;
  return {[first, next, d](double t) { return t <= d ? first.at(t) : next.at(t - d); },
          merge_channels(channels, next.channels), duration + next.duration};
}

ControlProgram ControlProgram::with_gradient(const Mat3& gradient) const {
  const auto inner = at;
  return {[inner, gradient](double t) {
            ControlVector c = inner(t);
            c.gradient += gradient;
            return c;
          },
          channels, duration};
}

// ---------------------------------------------------------------------------------------
// Potentials

double DynamicPotential::energy(double t, const Vec3& p) const {
  PointFields f;
  prepare(p, f);
  Vec3 g;
  double b = 0.0;
  return evaluate(f, freeze(t), g, b);
}

ChipPotential::ChipPotential(const ChipLayout& layout, const SpeciesParams& species, ControlProgram program)
    : species_(species), program_(std::move(program)), moment_(species.moment()) {
  if (!program_.at) throw InvalidParameter("control program is empty");
  for (const auto& ch : program_.channels) {
    if (!layout.has_channel(ch)) throw InvalidParameter("program drives unknown channel '" + ch + "'");
    if (channels_.size() == kMaxChannels) throw InvalidParameter("too many driven channels");
    channels_.push_back(ch);
    ControlVector unit;
    unit.set(ch, 1.0);
    basis_.emplace_back(layout, unit);
  }
}

FrozenControl ChipPotential::freeze(double t) const {
  const ControlVector c = program_.at(t);
  FrozenControl f;
  for (std::size_t i = 0; i < channels_.size(); ++i) f.current[i] = c.current(channels_[i]);
  for (const auto& [ch, v] : c.currents)
    if (v != 0.0 && std::find(channels_.begin(), channels_.end(), ch) == channels_.end())
      throw InvalidParameter("control at t = " + std::to_string(t) + " drives undeclared channel '" + ch + "'");
  f.bias = c.bias;
  f.gradient = c.gradient;
  return f;
}

void ChipPotential::prepare(const Vec3& p, PointFields& f) const {
  f.p = p;
  for (std::size_t i = 0; i < basis_.size(); ++i) basis_[i].field_and_jacobian(p, f.B[i], f.J[i]);
}

double ChipPotential::evaluate(const PointFields& f, const FrozenControl& c, Vec3& grad, double& field) const {
  Vec3 B = c.bias + mul(c.gradient, f.p);
  Mat3 J = c.gradient;
  for (std::size_t i = 0; i < basis_.size(); ++i) {
    const double I = c.current[i];
    if (I == 0.0) continue;
    B += I * f.B[i];
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) J[r][k] += I * f.J[i][r][k];
  }
  field = norm(B);
  grad = -species_.mass * species_.gravity;
  if (field > 0.0) grad += mul_transposed(J, B / field) * moment_;
  return moment_ * field - species_.mass * dot(species_.gravity, f.p);
}

// ---------------------------------------------------------------------------------------
// Ensembles and observables

std::size_t EnsembleState::alive_count() const {
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
}

void EnsembleState::validate() const {
  const std::size_t n = positions.size();
  if (velocities.size() != n || alive.size() != n || majorana.size() != n)
    throw InvalidParameter("ensemble arrays differ in length");
  if (!(mass > 0.0)) throw InvalidParameter("ensemble mass must be positive");
}

int BasinEdges::classify(double x) const {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (x >= edges[i] && x < edges[i + 1]) return static_cast<int>(i);
  return -1;
}

double temperature_from_velocities(const std::vector<double>& v, double mass) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
  return mass * var / units::k_boltzmann;
}

Observables observe(const EnsembleState& state, const DynamicPotential* potential, const BasinEdges& basins) {
  state.validate();
  Observables o;
  o.t = state.t;
  const std::size_t n = state.size();
  std::array<std::vector<double>, 3> v;
  std::vector<double> counts(basins.names.size(), 0.0);
  double outside = 0.0;
  double majorana = 0.0;
  double energy = 0.0;
  std::optional<FrozenControl> frozen;
  if (potential) frozen = potential->freeze(state.t);
  PointFields pf;
  for (std::size_t i = 0; i < n; ++i) {
    if (state.majorana[i]) majorana += 1.0;
    if (!state.alive[i]) continue;
    o.com += state.positions[i];
    for (int a = 0; a < 3; ++a) v[a].push_back(state.velocities[i][a]);
    const int b = basins.classify(state.positions[i].x);
    if (b >= 0 && static_cast<std::size_t>(b) < counts.size())
      counts[static_cast<std::size_t>(b)] += 1.0;
    else
      outside += 1.0;
    if (potential) {
      potential->prepare(state.positions[i], pf);
      Vec3 g;
      double bm = 0.0;
      energy += potential->evaluate(pf, *frozen, g, bm) + 0.5 * state.mass * dot(state.velocities[i], state.velocities[i]);
    }
  }
  const std::size_t alive = v[0].size();
  const double N = n > 0 ? static_cast<double>(n) : 1.0;
  if (alive > 0) {
    o.com = o.com / static_cast<double>(alive);
    energy /= static_cast<double>(alive);
  }
  for (int a = 0; a < 3; ++a) o.temperature[a] = temperature_from_velocities(v[a], state.mass);
  o.loss_fraction = static_cast<double>(n - alive) / N;
  o.majorana_fraction = majorana / N;
  o.mean_energy = energy;
  for (std::size_t b = 0; b < counts.size(); ++b) o.basins.emplace_back(basins.names[b], counts[b] / N);
  o.outside_fraction = outside / N;
  return o;
}

// ---------------------------------------------------------------------------------------
// Sampling

EnsembleState sample_thermal(const EnergyLandscape& landscape, const TrapCharacterization& trap, double temperature,
                             std::size_t atoms, std::uint64_t seed, const SamplingOptions& options) {
  if (!(temperature > 0.0)) throw InvalidParameter("temperature must be positive");
  if (atoms == 0) throw InvalidParameter("ensemble needs at least one atom");
  if (options.burn_in < 0 || options.thinning < 1) throw InvalidParameter("burn-in >= 0 and thinning >= 1 required");
  const double kt = units::k_boltzmann * temperature;
  const double m = landscape.mass();
  if (trap.depth && kt > *trap.depth / 3.0)
    log(LogLevel::Warn, "k_B T exceeds a third of the trap depth; the sample will spill");

  auto inside = [&](const Vec3& p) {
    if (!options.box.contains(p)) return false;
    if (options.x_lo && p.x < *options.x_lo) return false;
    if (options.x_hi && p.x > *options.x_hi) return false;
    return true;
  };
  if (!inside(trap.position)) throw InvalidParameter("trap lies outside the sampling region");

  std::array<double, 3> width{};
  for (int a = 0; a < 3; ++a) {
    const double w = trap.freqs[a] > 0.0 ? std::sqrt(kt / m) / (2.0 * units::pi * trap.freqs[a]) : options.max_step;
    width[a] = std::min(w, options.max_step);
  }
  auto rng = make_rng(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Vec3 x = trap.position;
  double u = landscape.energy(x);
  double scale = options.step_scale;
  long accepted = 0;
  long proposed = 0;
  long count = 0;
  auto step = [&]() {
    Vec3 d;
    if (options.hop && ++count % 10 == 0)
      d = uni(rng) < 0.5 ? *options.hop : -*options.hop;
    else
      for (int a = 0; a < 3; ++a) d += trap.axes[a] * (scale * width[a] * gauss(rng));
    const Vec3 y = x + d;
    ++proposed;
    if (!inside(y)) return;
    const double uy = landscape.energy(y);
    if (uy <= u || uni(rng) < std::exp(-(uy - u) / kt)) {
      x = y;
      u = uy;
      ++accepted;
    }
  };

  int retunes = 0;
  for (int b = 0; b < options.burn_in; ++b) {
    step();
    if (proposed == 100) {
      const double rate = static_cast<double>(accepted) / static_cast<double>(proposed);
      if (rate < 0.2 && retunes < 10) {
        scale *= 0.5;
        ++retunes;
      }
      accepted = proposed = 0;
    }
  }
  accepted = proposed = 0;

  EnsembleState s;
  s.mass = m;
  s.positions.reserve(atoms);
  for (std::size_t i = 0; i < atoms; ++i) {
    for (int k = 0; k < options.thinning; ++k) step();
    s.positions.push_back(x);
  }
  const double rate = static_cast<double>(accepted) / static_cast<double>(std::max(1L, proposed));
  if (rate < 0.01) throw NoConvergence("Metropolis acceptance below 1 % after retuning");
  log(LogLevel::Debug, "Metropolis acceptance " + std::to_string(rate));

  auto vrng = make_rng(seed, 1);
  const double sv = std::sqrt(kt / m);
  for (std::size_t i = 0; i < atoms; ++i) s.velocities.push_back({sv * gauss(vrng), sv * gauss(vrng), sv * gauss(vrng)});
  s.alive.assign(atoms, 1);
  s.majorana.assign(atoms, 0);
  return s;
}

EnsembleState sample_thermal(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                             const TrapCharacterization& trap, double temperature, std::size_t atoms,
                             std::uint64_t seed, const SamplingOptions& options) {
  const PotentialLandscape landscape(layout, ctrl, species);
  return sample_thermal(landscape, trap, temperature, atoms, seed, options);
}

// ---------------------------------------------------------------------------------------
// Integration

Trajectory propagate(const EnsembleState& state, const DynamicPotential& potential, double t_end,
                     const PropagateOptions& options) {
  state.validate();
  if (!(options.nu_max > 0.0)) throw InvalidParameter("propagation needs the largest trap frequency");
  double dt = options.dt > 0.0 ? options.dt : 1.0 / (kDefaultStepsPerPeriod * options.nu_max);
  if (dt > 1.0 / (kMinStepsPerPeriod * options.nu_max) * (1.0 + 1e-12))
    throw InvalidParameter("time step exceeds 1/(50 nu_max)");
  if (!(t_end >= state.t)) throw InvalidParameter("t_end lies before the ensemble time");

  const double span = t_end - state.t;
  const long long steps = span > 0.0 ? static_cast<long long>(std::ceil(span / dt - 1e-9)) : 0;
  if (steps > 0) dt = span / static_cast<double>(steps);

  // snapshot boundaries in steps
  std::vector<long long> marks{0};
  if (options.snapshot_interval > 0.0 && steps > 0) {
    const long long every = std::max(1LL, static_cast<long long>(std::llround(options.snapshot_interval / dt)));
    for (long long k = every; k < steps; k += every) marks.push_back(k);
  }
  if (steps > 0) marks.push_back(steps);

  Trajectory traj;
  traj.dt = dt;
  traj.steps = steps;
  EnsembleState s = state;
  traj.snapshots.push_back(observe(s, &potential, options.basins));
  const double t0 = state.t;
  const double m = potential.mass();
  const int threads = std::max(1, options.threads);

  for (std::size_t seg = 1; seg < marks.size(); ++seg) {
    const long long k0 = marks[seg - 1];
    const long long k1 = marks[seg];
    // controls frozen at every half step of the segment
    std::vector<FrozenControl> half(static_cast<std::size_t>(k1 - k0));
    for (long long k = k0; k < k1; ++k)
      half[static_cast<std::size_t>(k - k0)] = potential.freeze(t0 + (static_cast<double>(k) + 0.5) * dt);

    auto run = [&](std::size_t lo, std::size_t hi) {
      PointFields pf;
      for (std::size_t i = lo; i < hi; ++i) {
        if (!s.alive[i]) continue;
        Vec3 x = s.positions[i];
        Vec3 v = s.velocities[i];
        Vec3 g;
        double b = 0.0;
        potential.prepare(x, pf);
        potential.evaluate(pf, half[0], g, b);
        v -= g * (0.5 * dt / m);
        for (std::size_t k = 0; k < half.size(); ++k) {
          x += v * dt;
          if (!options.box.contains(x)) {
            s.alive[i] = 0;
            break;
          }
          potential.prepare(x, pf);
          const double u = potential.evaluate(pf, half[k], g, b);
          if (!is_finite(g)) throw SingularityError(x);
          v -= g * (0.5 * dt / m);
          if (b < options.majorana_threshold) s.majorana[i] = 1;
          if (options.escape_energy && u > *options.escape_energy) {
            s.alive[i] = 0;
            break;
          }
          if (k + 1 < half.size()) {
            potential.evaluate(pf, half[k + 1], g, b);
            v -= g * (0.5 * dt / m);
          }
        }
        s.positions[i] = x;
        s.velocities[i] = v;
      }
    };

    const std::size_t n = s.size();
    if (threads == 1 || n < 2) {
      run(0, n);
    } else {
      const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
      const std::size_t chunk = (n + w - 1) / w;
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(w);
      for (std::size_t t = 0; t < w; ++t)
        pool.emplace_back([&, t] {
          try {
            run(t * chunk, std::min(n, (t + 1) * chunk));
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    s.t = t0 + static_cast<double>(k1) * dt;
    traj.snapshots.push_back(observe(s, &potential, options.basins));
  }
  if (steps == 0) traj.snapshots.push_back(traj.snapshots.front());
  traj.final_state = std::move(s);
  return traj;
}

double max_trap_frequency(const ChipLayout& layout, const SpeciesParams& species, const ControlProgram& program,
                          const Vec3& seed, int samples) {
  if (samples < 1) throw InvalidParameter("need at least one sample");
  double best = 0.0;
  Vec3 p = seed;
  for (int k = 0; k <= samples; ++k) {
    const double t = program.duration * k / samples;
    try {
      const auto trap = find_minimum(layout, program.at(t), species, p);
      best = std::max(best, trap.freqs[2]);
      p = trap.position;
    } catch (const Error&) {
    }
  }
  if (!(best > 0.0)) throw TrapError("no trap found along the program");
  return best;
}

// ---------------------------------------------------------------------------------------
// Output

std::string observables_csv(const std::vector<Observables>& snapshots) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "t_s,com_x_m,com_y_m,com_z_m,T_x_K,T_y_K,T_z_K,loss,majorana,energy_J";
  if (!snapshots.empty())
    for (const auto& [name, f] : snapshots.front().basins) os << ",basin_" << name;
  os << ",outside\n";
  for (const auto& o : snapshots) {
    os << o.t << ',' << o.com.x << ',' << o.com.y << ',' << o.com.z << ',' << o.temperature[0] << ','
       << o.temperature[1] << ',' << o.temperature[2] << ',' << o.loss_fraction << ',' << o.majorana_fraction << ','
       << o.mean_energy;
    for (const auto& [name, f] : o.basins) os << ',' << f;
    os << ',' << o.outside_fraction << '\n';
  }
  return os.str();
}

namespace {

template <class T>
void put_le(std::ostream& os, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  os.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bits{};
  if (!is.read(reinterpret_cast<char*>(bits.data()), sizeof(T))) throw ParseError("phase space", "truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_phase_space(const EnsembleState& state, const std::filesystem::path& path) {
  state.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  put_le<std::uint64_t>(os, state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    for (int a = 0; a < 3; ++a) put_le<double>(os, state.positions[i][a]);
    for (int a = 0; a < 3; ++a) put_le<double>(os, state.velocities[i][a]);
  }
}

EnsembleState read_phase_space(const std::filesystem::path& path, double mass) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  const auto n = get_le<std::uint64_t>(is);
  EnsembleState s;
  s.mass = mass;
  for (std::uint64_t i = 0; i < n; ++i) {
    Vec3 p, v;
    for (int a = 0; a < 3; ++a) p[a] = get_le<double>(is);
    for (int a = 0; a < 3; ++a) v[a] = get_le<double>(is);
    s.positions.push_back(p);
    s.velocities.push_back(v);
  }
  s.alive.assign(s.size(), 1);
  s.majorana.assign(s.size(), 0);
  return s;
}

QuadraticFit fit_quadratic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidParameter("quadratic fit needs at least two points");
  double sx4 = 0.0, sx2y = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x2 = x[i] * x[i];
    sx4 += x2 * x2;
    sx2y += x2 * y[i];
    mean += y[i];
  }
  if (!(sx4 > 0.0)) throw InvalidParameter("quadratic fit needs a nonzero abscissa");
  mean /= static_cast<double>(y.size());
  QuadraticFit f;
  f.c = sx2y / sx4;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.c * x[i] * x[i];
    ss_res += r * r;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  f.c_error = std::sqrt(ss_res / static_cast<double>(x.size() - 1) / sx4);
  return f;
}

}  // namespace chiptrap

#include "chiptrap/field.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "chiptrap/errors.hpp"
#include "chiptrap/units.hpp"

namespace chiptrap {

namespace {

constexpr double kMu0Over4Pi = units::mu0 / (4.0 * units::pi);

[[noreturn]] void singular(const Vec3& p) { throw SingularityError(p); }

/// Distance from p to the closed segment [a, b] is below the guard.
bool within_guard(const Vec3& a, const Vec3& b, const Vec3& p) {
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  double s = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return norm(p - (a + ab * s)) < kSingularityGuard;
}

// B of a filament from a to b with strength k = mu0 I / 4 pi:
//   B = k (r1 x r2) (n1 + n2) / (n1 n2 (n1 n2 + r1.r2)),  r1 = p - a, r2 = p - b.
// n1 n2 + r1.r2 is rewritten as |r1 x r2|^2 / (n1 n2 - r1.r2) when r1.r2 < 0 to avoid
// cancellation close to the wire.
template <bool WithJacobian>
inline void accumulate(const Vec3& a, const Vec3& b, double k, const Vec3& p, Vec3& B, Mat3* J) {
  const Vec3 r1 = p - a;
  const Vec3 r2 = p - b;
  const double n1 = norm(r1);
  const double n2 = norm(r2);
  const Vec3 c = cross(r1, r2);
  const double c2 = dot(c, c);
  const double d = dot(r1, r2);
  const double n12 = n1 * n2;
  const Vec3 w = a - b;
  if (c2 < kSingularityGuard * kSingularityGuard * dot(w, w)) {
    if (within_guard(a, b, p)) singular(p);
    if (c2 == 0.0) return;  // on the axis extension: field vanishes
  }
  const double D = d < 0.0 ? c2 / (n12 - d) : n12 + d;
  const double S = n1 + n2;
  const double Q = n12 * D;
  const double f = S / Q;
  B += c * (k * f);
  if constexpr (WithJacobian) {
    const Vec3 u1 = r1 / n1;
    const Vec3 u2 = r2 / n2;
    const Vec3 grad_s = u1 + u2;
    const Vec3 grad_n12 = u1 * n2 + u2 * n1;
    const Vec3 grad_dd = grad_s * S;  // grad(n1 n2 + r1.r2)
    const Vec3 grad_q = grad_n12 * D + grad_dd * n12;
    const Vec3 grad_f = grad_s / Q - grad_q * (S / (Q * Q));
    const double kf = k * f;
    // d(r1 x r2)/dx_j = e_j x (a - b)
    auto& m = *J;
    m[0][0] += k * c.x * grad_f.x;
    m[0][1] += kf * w.z + k * c.x * grad_f.y;
    m[0][2] += -kf * w.y + k * c.x * grad_f.z;
    m[1][0] += -kf * w.z + k * c.y * grad_f.x;
    m[1][1] += k * c.y * grad_f.y;
    m[1][2] += kf * w.x + k * c.y * grad_f.z;
    m[2][0] += kf * w.y + k * c.z * grad_f.x;
    m[2][1] += -kf * w.x + k * c.z * grad_f.y;
    m[2][2] += k * c.z * grad_f.z;
  }
}

}  // namespace

double ControlVector::current(const ChannelId& channel) const {
  auto it = currents.find(channel);
  return it == currents.end() ? 0.0 : it->second;
}

ControlVector ControlVector::scaled(double factor) const {
  ControlVector out = *this;
  for (auto& [_, v] : out.currents) v *= factor;
  out.bias *= factor;
  for (auto& row : out.gradient)
    for (double& v : row) v *= factor;
  return out;
}

void ControlVector::validate() const {
  for (const auto& [ch, v] : currents)
    if (!std::isfinite(v)) throw InvalidParameter("current of channel " + ch + " is not finite");
  if (!is_finite(bias)) throw InvalidParameter("bias field is not finite");
  if (norm(bias) >= 0.1) throw InvalidParameter("bias field magnitude must stay below 0.1 T");
  for (const auto& row : gradient)
    for (double v : row)
      if (!std::isfinite(v)) throw InvalidParameter("ambient gradient is not finite");
}

Mat3 axial_gradient(double g) {
  Mat3 m{};
  m[0][0] = g;
  m[1][1] = -0.5 * g;
  m[2][2] = -0.5 * g;
  return m;
}

SpeciesParams SpeciesParams::rb87() {
  return {units::rb87_mass, 1.0, {0.0, 0.0, units::standard_gravity}};
}

double SpeciesParams::moment() const { return mf_gf * units::mu_bohr; }

Vec3 segment_field(const WireSegment& seg, double current, const Vec3& p) {
  Vec3 B;
  accumulate<false>(seg.start, seg.end, kMu0Over4Pi * current * seg.weight, p, B, nullptr);
  return B;
}

Mat3 segment_field_jacobian(const WireSegment& seg, double current, const Vec3& p) {
  Vec3 B;
  Mat3 J{};
  accumulate<true>(seg.start, seg.end, kMu0Over4Pi * current * seg.weight, p, B, &J);
  return J;
}

Vec3 total_field(const ChipLayout& layout, const ControlVector& ctrl, const Vec3& p) {
  return FieldModel(layout, ctrl).field(p);
}

double potential(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                 const Vec3& p) {
  return Potential(layout, ctrl, species).energy(p);
}

namespace {

FieldSample fd_sample(const FieldModel& model, const Vec3& p, double h) {
  FieldSample s;
  s.B = model.field(p);
  for (int j = 0; j < 3; ++j) {
    Vec3 e;
    e[j] = h;
    const Vec3 d = (model.field(p + e) - model.field(p - e)) / (2.0 * h);
    for (int i = 0; i < 3; ++i) s.gradB[i][j] = d[i];
  }
  // 3x3x3 stencil of |B|
  double g[3][3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        g[i][j][k] = model.magnitude(p + Vec3{(i - 1) * h, (j - 1) * h, (k - 1) * h});
  Mat3 H{};
  auto at = [&](int dx, int dy, int dz) { return g[dx + 1][dy + 1][dz + 1]; };
  H[0][0] = (at(1, 0, 0) - 2 * at(0, 0, 0) + at(-1, 0, 0)) / (h * h);
  H[1][1] = (at(0, 1, 0) - 2 * at(0, 0, 0) + at(0, -1, 0)) / (h * h);
  H[2][2] = (at(0, 0, 1) - 2 * at(0, 0, 0) + at(0, 0, -1)) / (h * h);
  H[0][1] = H[1][0] = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / (4 * h * h);
  H[0][2] = H[2][0] = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / (4 * h * h);
  H[1][2] = H[2][1] = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / (4 * h * h);
  s.hessB_mag = H;
  return s;
}

}  // namespace

FieldSample field_derivatives(const ChipLayout& layout, const ControlVector& ctrl, const Vec3& p,
                              double step, bool richardson) {
  if (!(step > 0.0)) throw InvalidParameter("finite-difference step must be positive");
  const FieldModel model(layout, ctrl);
  FieldSample coarse = fd_sample(model, p, step);
  if (!richardson) return coarse;
  FieldSample fine = fd_sample(model, p, 0.5 * step);
  // second-order stencils: (4 f(h/2) - f(h)) / 3
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      fine.gradB[i][j] = (4.0 * fine.gradB[i][j] - coarse.gradB[i][j]) / 3.0;
      (*fine.hessB_mag)[i][j] = (4.0 * (*fine.hessB_mag)[i][j] - (*coarse.hessB_mag)[i][j]) / 3.0;
    }
  return fine;
}

FieldModel::FieldModel(const ChipLayout& layout, const ControlVector& ctrl)
    : bias_(ctrl.bias), gradient_(ctrl.gradient) {
  for (const auto& row : gradient_)
    for (double v : row) has_gradient_ = has_gradient_ || v != 0.0;
  filaments_.reserve(layout.segments().size());
  for (const auto& s : layout.segments()) {
    const double I = ctrl.current(s.channel);
    if (I == 0.0 || s.weight == 0.0) continue;
    filaments_.push_back({s.start, s.end, kMu0Over4Pi * I * s.weight});
  }
}

Vec3 FieldModel::field(const Vec3& p) const {
  Vec3 B = bias_;
  if (has_gradient_) B += mul(gradient_, p);
  for (const auto& f : filaments_) accumulate<false>(f.a, f.b, f.strength, p, B, nullptr);
  return B;
}

void FieldModel::field_and_jacobian(const Vec3& p, Vec3& B, Mat3& J) const {
  B = bias_;
  J = Mat3{};
  if (has_gradient_) {
    B += mul(gradient_, p);
    J = gradient_;
  }
  for (const auto& f : filaments_) accumulate<true>(f.a, f.b, f.strength, p, B, &J);
}

Vec3 FieldModel::magnitude_gradient(const Vec3& p) const {
  Vec3 B;
  Mat3 J;
  field_and_jacobian(p, B, J);
  const double m = norm(B);
  if (m == 0.0) return {};
  return mul_transposed(J, B / m);
}

std::vector<Vec3> FieldModel::field_batch(std::span<const Vec3> points, int threads) const {
  std::vector<Vec3> out(points.size());
  const std::size_t n = points.size();
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) out[i] = field(points[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  const std::size_t chunk = (n + t - 1) / t;
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) out[i] = field(points[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Potential::Potential(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species)
    : Potential(FieldModel(layout, ctrl), species) {}

Potential::Potential(FieldModel model, const SpeciesParams& species)
    : model_(std::move(model)), species_(species), moment_(species.moment()) {}

double Potential::energy(const Vec3& p) const {
  const double gravity = -species_.mass * dot(species_.gravity, p);
  if (moment_ == 0.0) return gravity;
  return moment_ * model_.magnitude(p) + gravity;
}

double Potential::energy_and_gradient(const Vec3& p, Vec3& grad, double* field_magnitude) const {
  Vec3 B;
  Mat3 J;
  model_.field_and_jacobian(p, B, J);
  const double m = norm(B);
  grad = -species_.mass * species_.gravity;
  if (m > 0.0) grad += mul_transposed(J, B / m) * moment_;
  if (field_magnitude) *field_magnitude = m;
  return moment_ * m - species_.mass * dot(species_.gravity, p);
}

Vec3 Potential::gradient(const Vec3& p) const {
  Vec3 g;
  energy_and_gradient(p, g);
  return g;
}

Mat3 Potential::hessian(const Vec3& p, double step) const {
  Mat3 H{};
  for (int j = 0; j < 3; ++j) {
    Vec3 e;
    e[j] = step;
    const Vec3 d = (gradient(p + e) - gradient(p - e)) / (2.0 * step);
    for (int i = 0; i < 3; ++i) H[i][j] = d[i];
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) H[i][j] = H[j][i] = 0.5 * (H[i][j] + H[j][i]);
  return H;
}

}  // namespace chiptrap

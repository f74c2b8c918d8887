#include "dualrr/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace dualrr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double entropy_nats(const double* p, std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

}  // namespace

void Categorical::validate() const {
  if (probs.empty() || probs.size() > 16)
    throw Error("categorical: need between 1 and 16 outcomes");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw Error("categorical: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw Error("categorical: probabilities do not sum to one");
}

double kl_divergence(const Categorical& p, const Categorical& q) {
  if (p.probs.size() != q.probs.size())
    throw Error("divergence: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0) return kInf;
    acc += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  // Exact summation can leave a tiny negative residue when p == q.
  return std::max(0.0, acc);
}

double tv_distance(const Categorical& p, const Categorical& q) {
  if (p.probs.size() != q.probs.size())
    throw Error("distance: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i)
    acc += std::abs(p.probs[i] - q.probs[i]);
  return 0.5 * acc;
}

Categorical random_simplex(Rng& rng, std::size_t v) {
  if (v == 0 || v > 16) throw Error("simplex draw: need between 1 and 16 outcomes");
  Categorical c;
  c.probs.resize(v);
  double sum = 0.0;
  for (double& p : c.probs) {
    p = -std::log(rng.uniform());  // Exp(1); uniform() never returns 0 or 1
    sum += p;
  }
  for (double& p : c.probs) p /= sum;
  return c;
}

Categorical mix(const Categorical& a, const Categorical& b, double w) {
  if (a.probs.size() != b.probs.size()) throw Error("mixture: size mismatch");
  if (!(w >= 0.0 && w <= 1.0)) throw Error("mixture: weight outside [0,1]");
  Categorical out;
  out.probs.resize(a.probs.size());
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    out.probs[i] = (1.0 - w) * a.probs[i] + w * b.probs[i];
  return out;
}

Categorical perturb_to_kl(const Categorical& base, const Categorical& noise,
                          double target_eps) {
  if (!(target_eps >= 0.0)) throw Error("perturbation: negative divergence target");
  if (kl_divergence(base, mix(base, noise, 1.0)) <= target_eps)
    return mix(base, noise, 1.0);
  double lo = 0.0, hi = 1.0;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (kl_divergence(base, mix(base, noise, mid)) < target_eps)
      lo = mid;
    else
      hi = mid;
  }
  return mix(base, noise, 0.5 * (lo + hi));
}

namespace {

// Shared per-(teacher, student) pair bookkeeping for both checkers.
struct PairChecker {
  std::uint64_t sufficient_cases = 0;
  std::uint64_t violations = 0;
  double pinsker_max_excess = -1.0;

  // Returns the exact divergence for reuse by the caller.
  double inspect(const Categorical& t, const Categorical& s) {
    const double eps_hat = kl_divergence(t, s);
    const double tv = tv_distance(t, s);
    if (std::isfinite(eps_hat)) {
      const double excess = tv - std::sqrt(eps_hat / 2.0);
      if (excess > pinsker_max_excess) pinsker_max_excess = excess;
    }
    const double threshold = std::sqrt(2.0 * eps_hat);  // inf stays inf
    for (std::size_t i = 0; i < t.probs.size(); ++i)
      for (std::size_t j = 0; j < t.probs.size(); ++j) {
        const double margin = t.probs[i] - t.probs[j];
        if (margin < threshold) continue;
        ++sufficient_cases;
        if (s.probs[i] < s.probs[j]) ++violations;
      }
    return eps_hat;
  }
};

}  // namespace

FlipBoundReport verify_flip_bound(std::uint64_t trials, std::size_t v,
                                  const std::vector<double>& eps_grid,
                                  const std::vector<double>& delta_grid,
                                  std::uint64_t seed) {
  if (v < 2 || v > 16) throw UserError("flip bound: outcome count must lie in [2,16]");
  if (trials == 0) throw UserError("flip bound: need at least one trial");
  if (eps_grid.empty() || delta_grid.empty())
    throw UserError("flip bound: empty grid");
  for (double e : eps_grid)
    if (!(e > 0.0)) throw UserError("flip bound: divergence targets must be positive");
  for (double d : delta_grid)
    if (!(d > 0.0)) throw UserError("flip bound: margins must be positive");

  FlipBoundReport report;
  report.v = v;
  report.cells.reserve(eps_grid.size() * delta_grid.size());
  for (double e : eps_grid)
    for (double d : delta_grid) {
      FlipCell cell;
      cell.eps_target = e;
      cell.delta = d;
      report.cells.push_back(cell);
    }

  PairChecker checker;
  Rng rng(seed);
  for (std::uint64_t trial = 0; trial < trials; ++trial) {
    const Categorical teacher = random_simplex(rng, v);
    const Categorical noise = random_simplex(rng, v);
    for (std::size_t ei = 0; ei < eps_grid.size(); ++ei) {
      const Categorical student = perturb_to_kl(teacher, noise, eps_grid[ei]);
      const double eps_hat = checker.inspect(teacher, student);
      ++report.dist_pairs;
      for (std::size_t di = 0; di < delta_grid.size(); ++di) {
        FlipCell& cell = report.cells[ei * delta_grid.size() + di];
        const double bound = std::sqrt(2.0 * eps_hat) / cell.delta;
        for (std::size_t i = 0; i < v; ++i)
          for (std::size_t j = 0; j < v; ++j) {
            if (teacher.probs[i] - teacher.probs[j] < cell.delta) continue;
            ++cell.margin_pairs;
            cell.mean_bound += bound;
            if (student.probs[i] < student.probs[j]) ++cell.flips;
          }
      }
    }
  }
  for (FlipCell& cell : report.cells)
    if (cell.margin_pairs > 0)
      cell.mean_bound /= static_cast<double>(cell.margin_pairs);
  report.sufficient_cases = checker.sufficient_cases;
  report.sufficient_violations = checker.violations;
  report.pinsker_max_excess = checker.pinsker_max_excess;
  return report;
}

std::string FlipBoundReport::to_json() const {
  nlohmann::ordered_json j;
  j["outcomes"] = v;
  j["dist_pairs"] = dist_pairs;
  j["sufficient_cases"] = sufficient_cases;
  j["sufficient_violations"] = sufficient_violations;
  j["pinsker_max_excess"] = pinsker_max_excess;
  nlohmann::ordered_json cells_json = nlohmann::ordered_json::array();
  for (const FlipCell& c : cells) {
    const double freq = c.margin_pairs
                            ? static_cast<double>(c.flips) /
                                  static_cast<double>(c.margin_pairs)
                            : 0.0;
    cells_json.push_back({{"eps_target", c.eps_target},
                          {"delta", c.delta},
                          {"margin_pairs", c.margin_pairs},
                          {"flips", c.flips},
                          {"flip_freq", freq},
                          {"mean_bound", c.mean_bound}});
  }
  j["cells"] = std::move(cells_json);
  return j.dump();
}

namespace {

void enumerate_grid(std::size_t v, std::size_t parts,
                    const std::function<void(const Categorical&)>& visit) {
  std::vector<std::size_t> counts(v, 0);
  Categorical point;
  point.probs.resize(v);
  const double res = 1.0 / static_cast<double>(parts);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t axis,
                                                          std::size_t left) {
    if (axis + 1 == v) {
      counts[axis] = left;
      for (std::size_t i = 0; i < v; ++i)
        point.probs[i] = static_cast<double>(counts[i]) * res;
      visit(point);
      return;
    }
    for (std::size_t take = 0; take <= left; ++take) {
      counts[axis] = take;
      rec(axis + 1, left - take);
    }
  };
  rec(0, parts);
}

}  // namespace

GridReport flip_bound_grid(std::size_t v, double resolution) {
  if (v < 2 || v > 16) throw UserError("flip grid: outcome count must lie in [2,16]");
  if (!(resolution > 0.0 && resolution <= 0.5))
    throw UserError("flip grid: resolution must lie in (0, 0.5]");
  const double parts_f = 1.0 / resolution;
  const auto parts = static_cast<std::size_t>(std::llround(parts_f));
  if (std::abs(parts_f - static_cast<double>(parts)) > 1e-9)
    throw UserError("flip grid: resolution must divide 1 evenly");

  std::vector<Categorical> points;
  enumerate_grid(v, parts, [&](const Categorical& p) { points.push_back(p); });

  GridReport report;
  report.points = points.size();
  PairChecker checker;
  for (const Categorical& t : points)
    for (const Categorical& s : points) {
      checker.inspect(t, s);
      ++report.dist_pairs;
    }
  report.sufficient_cases = checker.sufficient_cases;
  report.violations = checker.violations;
  report.pinsker_max_excess = checker.pinsker_max_excess;
  return report;
}

void DiscreteEnv::validate() const {
  if (n_x == 0 || n_x > 8) throw Error("discrete env: contexts must lie in [1,8]");
  if (v < 2 || v > 6) throw Error("discrete env: outcomes must lie in [2,6]");
  if (l == 0 || l > 3) throw Error("discrete env: length must lie in [1,3]");
  if (table.size() != n_x * seq_count())
    throw Error("discrete env: table size mismatch");
  double sum = 0.0;
  for (double p : table) {
    if (!(p >= 0.0)) throw Error("discrete env: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw Error("discrete env: table does not sum to one");
}

std::size_t DiscreteEnv::seq_count() const {
  std::size_t n = 1;
  for (std::size_t t = 0; t < l; ++t) n *= v;
  return n;
}

DiscreteEnv random_env(std::size_t n_x, std::size_t v, std::size_t l,
                       double gamma, std::uint64_t seed) {
  if (!(gamma >= 0.0)) throw Error("discrete env: negative sharpness");
  DiscreteEnv env;
  env.n_x = n_x;
  env.v = v;
  env.l = l;
  Rng rng(seed);
  const Categorical px = random_simplex(rng, n_x);
  const std::size_t seqs = env.seq_count();
  env.table.resize(n_x * seqs);
  std::vector<double> scores(seqs);
  for (std::size_t x = 0; x < n_x; ++x) {
    double top = -kInf;
    for (double& s : scores) {
      s = 4.0 * rng.normal();
      top = std::max(top, s);
    }
    double z = 0.0;
    for (std::size_t y = 0; y < seqs; ++y) {
      const double e = std::exp(gamma * (scores[y] - top));
      env.table[x * seqs + y] = e;
      z += e;
    }
    for (std::size_t y = 0; y < seqs; ++y)
      env.table[x * seqs + y] *= px.probs[x] / z;
  }
  env.validate();
  return env;
}

DiscreteEnv deterministic_env(std::size_t n_x, std::size_t v, std::size_t l,
                              std::uint64_t seed) {
  DiscreteEnv env;
  env.n_x = n_x;
  env.v = v;
  env.l = l;
  Rng rng(seed);
  const std::size_t seqs = env.seq_count();
  env.table.assign(n_x * seqs, 0.0);
  const double px = 1.0 / static_cast<double>(n_x);
  for (std::size_t x = 0; x < n_x; ++x) {
    const std::size_t y = static_cast<std::size_t>(rng.uniform_int(seqs));
    env.table[x * seqs + y] = px;
  }
  env.validate();
  return env;
}

DiscreteEnv factorized_env(std::size_t n_x, std::size_t v, std::size_t l,
                           std::uint64_t seed) {
  DiscreteEnv env;
  env.n_x = n_x;
  env.v = v;
  env.l = l;
  Rng rng(seed);
  const Categorical px = random_simplex(rng, n_x);
  const std::size_t seqs = env.seq_count();
  env.table.resize(n_x * seqs);
  for (std::size_t x = 0; x < n_x; ++x) {
    std::vector<Categorical> per_pos;
    for (std::size_t t = 0; t < l; ++t) per_pos.push_back(random_simplex(rng, v));
    for (std::size_t y = 0; y < seqs; ++y) {
      double p = px.probs[x];
      std::size_t rest = y;
      for (std::size_t t = l; t-- > 0;) {
        p *= per_pos[t].probs[rest % v];
        rest /= v;
      }
      env.table[x * seqs + y] = p;
    }
  }
  env.validate();
  return env;
}

namespace {

// Collapses the joint to P(x, y_1..y_t): sums out trailing positions.
std::vector<double> prefix_joint(const DiscreteEnv& env, std::size_t t) {
  std::size_t keep = 1;
  for (std::size_t i = 0; i < t; ++i) keep *= env.v;
  const std::size_t drop = env.seq_count() / keep;
  std::vector<double> out(env.n_x * keep, 0.0);
  for (std::size_t x = 0; x < env.n_x; ++x)
    for (std::size_t y = 0; y < keep; ++y) {
      double acc = 0.0;
      const double* base = env.table.data() + (x * keep + y) * drop;
      for (std::size_t r = 0; r < drop; ++r) acc += base[r];
      out[x * keep + y] = acc;
    }
  return out;
}

void check_position(const DiscreteEnv& env, std::size_t t) {
  env.validate();
  if (t < 2 || t > env.l)
    throw Error("conditional information: position must lie in [2, length]");
}

}  // namespace

double cmi_exact(const DiscreteEnv& env, std::size_t t) {
  check_position(env, t);
  // I(y_t ; y_{<t} | X) = H(y_t | X) - H(y_t | y_{<t}, X), both exact.
  const std::vector<double> joint = prefix_joint(env, t);  // P(x, y_1..y_t)
  std::size_t prefix_count = 1;
  for (std::size_t i = 0; i + 1 < t; ++i) prefix_count *= env.v;

  double h_cond = 0.0;  // H(y_t | y_{<t}, X)
  for (std::size_t x = 0; x < env.n_x; ++x)
    for (std::size_t p = 0; p < prefix_count; ++p) {
      const double* row = joint.data() + (x * prefix_count + p) * env.v;
      double mass = 0.0;
      for (std::size_t y = 0; y < env.v; ++y) mass += row[y];
      if (mass == 0.0) continue;
      double h = 0.0;
      for (std::size_t y = 0; y < env.v; ++y)
        if (row[y] > 0.0) h -= row[y] / mass * std::log(row[y] / mass);
      h_cond += mass * h;
    }
  return std::max(0.0, cond_entropy_position(env, t) - h_cond);
}

double cond_entropy_position(const DiscreteEnv& env, std::size_t t) {
  check_position(env, t);
  const std::vector<double> joint = prefix_joint(env, t);
  std::size_t prefix_count = 1;
  for (std::size_t i = 0; i + 1 < t; ++i) prefix_count *= env.v;

  double h = 0.0;
  std::vector<double> marginal(env.v);
  for (std::size_t x = 0; x < env.n_x; ++x) {
    std::fill(marginal.begin(), marginal.end(), 0.0);
    double mass = 0.0;
    for (std::size_t p = 0; p < prefix_count; ++p) {
      const double* row = joint.data() + (x * prefix_count + p) * env.v;
      for (std::size_t y = 0; y < env.v; ++y) {
        marginal[y] += row[y];
        mass += row[y];
      }
    }
    if (mass == 0.0) continue;
    for (std::size_t y = 0; y < env.v; ++y) marginal[y] /= mass;
    h += mass * entropy_nats(marginal.data(), env.v);
  }
  return h;
}

double cond_entropy_prefix(const DiscreteEnv& env, std::size_t t) {
  check_position(env, t);
  const std::vector<double> joint = prefix_joint(env, t - 1);  // P(x, y_{<t})
  std::size_t prefix_count = 1;
  for (std::size_t i = 0; i + 1 < t; ++i) prefix_count *= env.v;

  double h = 0.0;
  for (std::size_t x = 0; x < env.n_x; ++x) {
    const double* row = joint.data() + x * prefix_count;
    double mass = 0.0;
    for (std::size_t p = 0; p < prefix_count; ++p) mass += row[p];
    if (mass == 0.0) continue;
    double hx = 0.0;
    for (std::size_t p = 0; p < prefix_count; ++p)
      if (row[p] > 0.0) hx -= row[p] / mass * std::log(row[p] / mass);
    h += mass * hx;
  }
  return h;
}

}  // namespace dualrr

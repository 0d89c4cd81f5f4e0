#pragma once

// Experiment plumbing: disturbance streams, run configuration, the
// best-safe-linear-gain benchmark, regret curves, safety fuzzing and CSV
// output.

#include "ogdbzc/ogd_bzc.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <variant>

namespace ogdbzc {

/// Malformed or inconsistent run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The configured setup admits no safe operation.
class FeasibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Disturbance streams

struct IidUniform {
    std::uint64_t seed = 0;
};
struct ConstantDisturbance {
    Vec value;
};
/// A fixed sign pattern on the box corners, negated every `period` steps.
struct SignFlip {
    int period = 1;
    std::uint64_t seed = 0;
};
enum class AdaptiveStrategy { Cost, Boundary };
/// Picks the corner of the box that maximizes the predicted next-step cost
/// (Cost) or minimizes the next state's distance to the boundary (Boundary).
struct Adaptive {
    AdaptiveStrategy strategy = AdaptiveStrategy::Cost;
};
struct Replay {
    std::vector<Vec> values;
};

using DisturbanceVariant = std::variant<IidUniform, ConstantDisturbance, SignFlip, Adaptive, Replay>;

inline std::string variant_name(const DisturbanceVariant& v) {
    static const char* names[] = {"iid", "constant", "sign_flip", "adaptive", "replay"};
    return names[v.index()];
}

class DisturbanceStream {
public:
    DisturbanceStream(DisturbanceVariant v, double w_bar, std::optional<CostModel> cost = std::nullopt,
                      std::optional<SafetySpec> spec = std::nullopt)
        : v_(std::move(v)), w_bar_(w_bar), cost_(std::move(cost)), spec_(std::move(spec)) {
        if (!(w_bar >= 0.0)) throw std::invalid_argument("disturbance stream: w_bar must be >= 0");
        if (auto* s = std::get_if<IidUniform>(&v_)) rng_.seed(s->seed);
        if (auto* s = std::get_if<SignFlip>(&v_)) {
            if (s->period < 1) throw std::invalid_argument("sign flip: period must be >= 1");
            rng_.seed(s->seed);
        }
        if (auto* s = std::get_if<ConstantDisturbance>(&v_)) {
            if (inf_norm(s->value) > w_bar) throw DisturbanceError("constant disturbance exceeds w_bar");
        }
        if (auto* s = std::get_if<Adaptive>(&v_)) {
            if (s->strategy == AdaptiveStrategy::Cost && !cost_) cost_ = CostModel::quadratic();
            if (s->strategy == AdaptiveStrategy::Boundary && !spec_) throw std::invalid_argument("adaptive boundary stream needs the safety sets");
        }
    }

    const DisturbanceVariant& variant() const { return v_; }
    double w_bar() const { return w_bar_; }

    Vec next(const StepView& view) {
        const Eigen::Index n = view.sys.n();
        return std::visit(
            [&](auto& s) -> Vec {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, IidUniform>) {
                    std::uniform_real_distribution<double> d(-w_bar_, w_bar_);
                    Vec w(n);
                    for (Eigen::Index i = 0; i < n; ++i) w(i) = d(rng_);
                    return w;
                } else if constexpr (std::is_same_v<T, ConstantDisturbance>) {
                    require_dim(s.value.size(), n, "constant disturbance");
                    return s.value;
                } else if constexpr (std::is_same_v<T, SignFlip>) {
                    if (pattern_.size() != n) {
                        pattern_.resize(n);
                        std::bernoulli_distribution coin(0.5);
                        for (Eigen::Index i = 0; i < n; ++i) pattern_(i) = coin(rng_) ? 1.0 : -1.0;
                    }
                    const double sign = (view.t / s.period) % 2 == 0 ? 1.0 : -1.0;
                    return sign * w_bar_ * pattern_;
                } else if constexpr (std::is_same_v<T, Adaptive>) {
                    return adversary(s.strategy, view);
                } else {
                    const Vec& w = s.values.at(static_cast<std::size_t>(view.t));
                    require_dim(w.size(), n, "replayed disturbance");
                    return w;
                }
            },
            v_);
    }

private:
    Vec adversary(AdaptiveStrategy strategy, const StepView& v) const {
        const Eigen::Index n = v.sys.n();
        if (n > 20) throw std::invalid_argument("adaptive stream: too many corners");
        Vec best = Vec::Constant(n, w_bar_);
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
            Vec w(n);
            for (Eigen::Index i = 0; i < n; ++i) w(i) = (mask >> i) & 1U ? -w_bar_ : w_bar_;
            const Vec x1 = v.sys.A * v.x + v.sys.B * v.u + w;
            DisturbanceHistory h = v.history;
            h.push(w);
            const Vec u1 = control_input(v.model, v.weights, x1, h);
            double score = 0.0;
            if (strategy == AdaptiveStrategy::Cost) score = cost_->evaluate(x1, u1);
            else score = -std::min(boundary_margin(spec_->state_set, x1), boundary_margin(spec_->input_set, u1));
            if (score > best_score) {
                best_score = score;
                best = w;
            }
        }
        return best;
    }

    DisturbanceVariant v_;
    double w_bar_;
    std::optional<CostModel> cost_;
    std::optional<SafetySpec> spec_;
    std::mt19937_64 rng_;
    Vec pattern_;
};

// ---------------------------------------------------------------------------
// Configuration

struct GridSpec {
    double lower = -1.0;
    double upper = 1.0;
    double step = 0.02;

    std::vector<double> values() const {
        if (!(step > 0.0) || !(upper >= lower)) throw ConfigError("grid: need step > 0 and upper >= lower");
        std::vector<double> v;
        const long count = std::lround(std::floor((upper - lower) / step + 1e-9));
        for (long i = 0; i <= count; ++i) v.push_back(lower + static_cast<double>(i) * step);
        return v;
    }
};

/// A gain given explicitly, or the grid gain with the largest certified margin.
struct GainSpec {
    bool safest = false;
    Mat K;
};

struct CostSpec {
    enum class Kind { Quadratic, SoftplusHinge } kind = Kind::Quadratic;
    double q = 1.0;
    double r = 1.0;
    double beta = 4.0;
    double dead_zone = 0.0;

    CostModel make(Eigen::Index n, Eigen::Index m) const {
        return kind == Kind::Quadratic ? CostModel::quadratic(q, r) : CostModel::softplus_hinge(beta, dead_zone, n, m);
    }
};

struct DisturbanceSpec {
    std::string variant = "iid";
    Vec value;
    int period = 5;
    AdaptiveStrategy strategy = AdaptiveStrategy::Cost;
};

struct RunConfig {
    LtiSystem sys;
    SafetySpec spec{ConvexSet::l2_ball(Vec::Zero(1), 1.0), ConvexSet::l2_ball(Vec::Zero(1), 1.0)};
    GainSpec K;
    GainSpec K_ss;
    std::optional<Mat> baseline_K;
    GridSpec grid;
    CostSpec cost;
    Schedule schedule = Schedule::Experiment;
    ScheduleOptions overrides;
    int T = 200;
    DisturbanceSpec disturbance;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    nlohmann::json source;
};

namespace detail {

using nlohmann::json;

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items()) {
        if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

inline const json& need(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    return j.at(key);
}

inline double number(const json& j, const std::string& where) {
    if (!j.is_number()) throw ConfigError(where + ": expected a number");
    return j.get<double>();
}

inline Vec vector_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], where);
    return v;
}

// Rows of a matrix as nested arrays.
inline Mat matrix_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) throw ConfigError(where + ": expected a nonempty array of rows");
    const std::size_t cols = j[0].size();
    Mat M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(where + ": rows differ in length");
        for (std::size_t c = 0; c < cols; ++c) M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], where);
    }
    return M;
}

inline ConvexSet set_of(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a set record");
    const std::string type = need(j, where, "type").get<std::string>();
    try {
        if (type == "box") {
            allow_keys(j, where, {"type", "lower", "upper"});
            return ConvexSet::box(vector_of(need(j, where, "lower"), where + ".lower"), vector_of(need(j, where, "upper"), where + ".upper"));
        }
        if (type == "l2ball") {
            allow_keys(j, where, {"type", "center", "radius"});
            return ConvexSet::l2_ball(vector_of(need(j, where, "center"), where + ".center"), number(need(j, where, "radius"), where + ".radius"));
        }
        if (type == "polytope") {
            allow_keys(j, where, {"type", "rows", "offsets"});
            return ConvexSet::polytope(matrix_of(need(j, where, "rows"), where + ".rows"), vector_of(need(j, where, "offsets"), where + ".offsets"));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    throw ConfigError(where + ": unknown set type '" + type + "'");
}

inline GainSpec gain_of(const json& j, const std::string& where) {
    if (j.is_string()) {
        if (j.get<std::string>() != "safest") throw ConfigError(where + ": expected a matrix or \"safest\"");
        return GainSpec{true, Mat()};
    }
    return GainSpec{false, matrix_of(j, where)};
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::allow_keys;
    using detail::need;
    using detail::number;
    RunConfig c;
    c.source = j;
    try {
        allow_keys(j, "config", {"system", "safety", "controller", "cost", "params", "run", "disturbance", "seed", "output"});

        const auto& js = need(j, "config", "system");
        allow_keys(js, "system", {"A", "B", "w_bar"});
        try {
            c.sys = LtiSystem(detail::matrix_of(need(js, "system", "A"), "system.A"), detail::matrix_of(need(js, "system", "B"), "system.B"),
                              number(need(js, "system", "w_bar"), "system.w_bar"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("system: ") + e.what());
        }

        const auto& jsafe = need(j, "config", "safety");
        allow_keys(jsafe, "safety", {"state", "input"});
        c.spec.state_set = detail::set_of(need(jsafe, "safety", "state"), "safety.state");
        c.spec.input_set = detail::set_of(need(jsafe, "safety", "input"), "safety.input");
        if (c.spec.state_set.dimension() != c.sys.n()) throw ConfigError("safety.state: dimension differs from the state");
        if (c.spec.input_set.dimension() != c.sys.m()) throw ConfigError("safety.input: dimension differs from the input");

        const auto& jc = need(j, "config", "controller");
        allow_keys(jc, "controller", {"K", "K_ss", "baseline_K", "grid"});
        c.K = detail::gain_of(need(jc, "controller", "K"), "controller.K");
        c.K_ss = jc.contains("K_ss") ? detail::gain_of(jc.at("K_ss"), "controller.K_ss") : c.K;
        if (jc.contains("baseline_K")) c.baseline_K = detail::matrix_of(jc.at("baseline_K"), "controller.baseline_K");
        for (const GainSpec* g : {&c.K, &c.K_ss}) {
            if (!g->safest && (g->K.rows() != c.sys.m() || g->K.cols() != c.sys.n())) throw ConfigError("controller: gain must be m x n");
        }
        if (c.baseline_K && (c.baseline_K->rows() != c.sys.m() || c.baseline_K->cols() != c.sys.n())) {
            throw ConfigError("controller.baseline_K: gain must be m x n");
        }
        if (jc.contains("grid")) {
            const auto& jg = jc.at("grid");
            allow_keys(jg, "controller.grid", {"lower", "upper", "step"});
            if (jg.contains("lower")) c.grid.lower = number(jg.at("lower"), "grid.lower");
            if (jg.contains("upper")) c.grid.upper = number(jg.at("upper"), "grid.upper");
            if (jg.contains("step")) c.grid.step = number(jg.at("step"), "grid.step");
            c.grid.values();
        }

        if (j.contains("cost")) {
            const auto& jcost = j.at("cost");
            const std::string type = need(jcost, "cost", "type").get<std::string>();
            if (type == "quadratic") {
                allow_keys(jcost, "cost", {"type", "q", "r"});
                c.cost.kind = CostSpec::Kind::Quadratic;
                if (jcost.contains("q")) c.cost.q = number(jcost.at("q"), "cost.q");
                if (jcost.contains("r")) c.cost.r = number(jcost.at("r"), "cost.r");
                if (!(c.cost.q >= 0.0 && c.cost.r >= 0.0)) throw ConfigError("cost: weights must be >= 0");
            } else if (type == "softplus_hinge") {
                allow_keys(jcost, "cost", {"type", "beta", "dead_zone"});
                c.cost.kind = CostSpec::Kind::SoftplusHinge;
                if (jcost.contains("beta")) c.cost.beta = number(jcost.at("beta"), "cost.beta");
                if (jcost.contains("dead_zone")) c.cost.dead_zone = number(jcost.at("dead_zone"), "cost.dead_zone");
                if (!(c.cost.beta > 0.0 && c.cost.dead_zone >= 0.0)) throw ConfigError("cost: need beta > 0 and dead_zone >= 0");
            } else {
                throw ConfigError("cost: unknown type '" + type + "'");
            }
        }

        if (j.contains("params")) {
            const auto& jp = j.at("params");
            allow_keys(jp, "params", {"schedule", "H", "eta", "epsilon", "epsilon_cap_fraction"});
            if (jp.contains("schedule")) {
                const std::string s = jp.at("schedule").get<std::string>();
                if (s == "theorem") c.schedule = Schedule::Theorem;
                else if (s == "experiment") c.schedule = Schedule::Experiment;
                else if (s == "manual") c.schedule = Schedule::Manual;
                else throw ConfigError("params.schedule: expected theorem, experiment or manual");
            }
            if (jp.contains("H")) {
                if (!jp.at("H").is_number_integer() || jp.at("H").get<int>() < 1) throw ConfigError("params.H: expected an integer >= 1");
                c.overrides.H = jp.at("H").get<int>();
            }
            if (jp.contains("eta")) c.overrides.eta = number(jp.at("eta"), "params.eta");
            if (jp.contains("epsilon")) c.overrides.epsilon = number(jp.at("epsilon"), "params.epsilon");
            if (jp.contains("epsilon_cap_fraction")) c.overrides.epsilon_cap_fraction = number(jp.at("epsilon_cap_fraction"), "params.epsilon_cap_fraction");
            if (c.schedule == Schedule::Manual && (!c.overrides.H || !c.overrides.eta || !c.overrides.epsilon)) {
                throw ConfigError("params: manual schedule needs H, eta and epsilon");
            }
        }

        if (j.contains("run")) {
            const auto& jr = j.at("run");
            allow_keys(jr, "run", {"T"});
            if (jr.contains("T")) {
                if (!jr.at("T").is_number_integer() || jr.at("T").get<int>() < 1) throw ConfigError("run.T: expected an integer >= 1");
                c.T = jr.at("T").get<int>();
            }
        }

        if (j.contains("disturbance")) {
            const auto& jd = j.at("disturbance");
            const std::string v = need(jd, "disturbance", "variant").get<std::string>();
            c.disturbance.variant = v;
            if (v == "iid") {
                allow_keys(jd, "disturbance", {"variant"});
            } else if (v == "constant") {
                allow_keys(jd, "disturbance", {"variant", "value"});
                c.disturbance.value = detail::vector_of(need(jd, "disturbance", "value"), "disturbance.value");
                if (c.disturbance.value.size() != c.sys.n()) throw ConfigError("disturbance.value: dimension differs from the state");
                if (inf_norm(c.disturbance.value) > c.sys.w_bar) throw ConfigError("disturbance.value: exceeds w_bar");
            } else if (v == "sign_flip") {
                allow_keys(jd, "disturbance", {"variant", "period"});
                if (jd.contains("period")) c.disturbance.period = jd.at("period").get<int>();
                if (c.disturbance.period < 1) throw ConfigError("disturbance.period: expected >= 1");
            } else if (v == "adaptive") {
                allow_keys(jd, "disturbance", {"variant", "strategy"});
                const std::string s = jd.value("strategy", std::string("cost"));
                if (s == "cost") c.disturbance.strategy = AdaptiveStrategy::Cost;
                else if (s == "boundary") c.disturbance.strategy = AdaptiveStrategy::Boundary;
                else throw ConfigError("disturbance.strategy: expected cost or boundary");
            } else {
                throw ConfigError("disturbance.variant: expected iid, constant, sign_flip or adaptive");
            }
        }

        if (j.contains("seed")) {
            if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<long long>() >= 0)) {
                throw ConfigError("seed: expected a non-negative integer");
            }
            c.seed = j.at("seed").get<std::uint64_t>();
        }
        if (j.contains("output")) {
            allow_keys(j.at("output"), "output", {"dir"});
            c.out_dir = j.at("output").value("dir", c.out_dir);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

/// The two-dimensional constrained toy: unit-disc state and unit input
/// bounds, the safest grid gain for control and [0.5, 0] as the baseline.
inline const char* section6_json() {
    return R"({
  "system": {"A": [[1.0, 1.0], [0.0, 0.5]], "B": [[1.0], [1.0]], "w_bar": 0.3},
  "safety": {
    "state": {"type": "l2ball", "center": [0.0, 0.0], "radius": 1.0},
    "input": {"type": "l2ball", "center": [0.0], "radius": 1.0}
  },
  "controller": {"K": "safest", "K_ss": "safest", "baseline_K": [[0.5, 0.0]],
                 "grid": {"lower": -1.0, "upper": 1.0, "step": 0.02}},
  "cost": {"type": "quadratic", "q": 1.0, "r": 1.0},
  "params": {"schedule": "experiment", "epsilon_cap_fraction": 0.5},
  "run": {"T": 200},
  "disturbance": {"variant": "iid"},
  "seed": 1,
  "output": {"dir": "out"}
}
)";
}

inline RunConfig section6_config() { return parse_config(nlohmann::json::parse(section6_json())); }

// ---------------------------------------------------------------------------
// Linear policies on a grid

struct LinearCandidate {
    Mat K;
    StabilityCertificate cert;
    double margin = 0.0;
};

struct SafeGrid {
    GridSpec grid;
    std::size_t total = 0;
    std::size_t unstable = 0;  // no strong-stability certificate
    std::size_t unsafe = 0;    // certificate found, reach boxes do not fit
    std::vector<LinearCandidate> safe;
};

/// Every grid gain with a stability certificate and a nonnegative certified margin,
/// in lexicographic grid order.
inline SafeGrid safe_grid(const LtiSystem& sys, const SafetySpec& spec, const GridSpec& grid) {
    const std::vector<double> vals = grid.values();
    const Eigen::Index m = sys.m();
    const Eigen::Index n = sys.n();
    const std::size_t entries = static_cast<std::size_t>(m * n);
    if (std::pow(static_cast<double>(vals.size()), static_cast<double>(entries)) > 5e6) throw ConfigError("grid: too many points");
    SafeGrid out;
    out.grid = grid;
    std::vector<std::size_t> idx(entries, 0);
    for (;;) {
        Mat K(m, n);
        for (std::size_t e = 0; e < entries; ++e) K(static_cast<Eigen::Index>(e / static_cast<std::size_t>(n)), static_cast<Eigen::Index>(e % static_cast<std::size_t>(n))) = vals[idx[e]];
        ++out.total;
        try {
            StabilityCertificate cert = certify_strong_stability(sys, K);
            if (auto s = certify_linear_policy_safety(sys, cert, spec)) out.safe.push_back({K, std::move(cert), s->margin});
            else ++out.unsafe;
        } catch (const StabilityError&) {
            ++out.unstable;
        }
        std::size_t e = entries;
        while (e > 0) {
            --e;
            if (++idx[e] < vals.size()) break;
            idx[e] = 0;
            if (e == 0) return out;
        }
        if (entries == 0) return out;
    }
}

inline const LinearCandidate& safest_linear_gain(const SafeGrid& g) {
    if (g.safe.empty()) throw FeasibilityError("no grid gain is certified safe");
    const LinearCandidate* best = &g.safe.front();
    for (const auto& c : g.safe)
        if (c.margin > best->margin) best = &c;
    return *best;
}

struct LinearRollout {
    double total_cost = 0.0;
    std::vector<double> costs;
    bool safe = true;
};

/// u = -K x from x_0 = 0 on recorded disturbances and costs, t = 0..T.
inline LinearRollout simulate_linear(const LtiSystem& sys, const SafetySpec& spec, const Mat& K, const std::vector<CostModel>& costs,
                                     const std::vector<Vec>& ws) {
    if (costs.size() != ws.size()) throw std::invalid_argument("simulate_linear: cost and disturbance traces differ in length");
    LinearRollout r;
    r.costs.reserve(ws.size());
    Vec x = Vec::Zero(sys.n());
    for (std::size_t t = 0; t < ws.size(); ++t) {
        const Vec u = -K * x;
        r.safe = r.safe && contains(spec.state_set, x, 0.0) && contains(spec.input_set, u, 0.0);
        const double c = costs[t].evaluate(x, u);
        r.costs.push_back(c);
        r.total_cost += c;
        x = sys.A * x + sys.B * u + ws[t];
    }
    return r;
}

struct Benchmark {
    Mat K_star;
    double total_cost = 0.0;
    bool trajectory_safe = false;
    std::size_t grid_points = 0;
    std::size_t safe_points = 0;
    std::size_t removed_points = 0;
    double grid_step = 0.0;
};

inline Benchmark best_safe_linear(const LtiSystem& sys, const SafetySpec& spec, const SafeGrid& grid, const std::vector<CostModel>& costs,
                                  const std::vector<Vec>& ws) {
    if (grid.safe.empty()) throw FeasibilityError("benchmark: no grid gain is certified safe");
    Benchmark b;
    b.grid_points = grid.total;
    b.safe_points = grid.safe.size();
    b.removed_points = grid.total - grid.safe.size();
    b.grid_step = grid.grid.step;
    b.total_cost = std::numeric_limits<double>::infinity();
    for (const auto& c : grid.safe) {
        const LinearRollout r = simulate_linear(sys, spec, c.K, costs, ws);
        if (r.total_cost < b.total_cost) {
            b.total_cost = r.total_cost;
            b.K_star = c.K;
            b.trajectory_safe = r.safe;
        }
    }
    return b;
}

inline Benchmark best_safe_linear(const LtiSystem& sys, const SafetySpec& spec, const std::vector<CostModel>& costs, const std::vector<Vec>& ws,
                                  const GridSpec& grid = {}) {
    return best_safe_linear(sys, spec, safe_grid(sys, spec, grid), costs, ws);
}

// ---------------------------------------------------------------------------
// Running a configuration

/// Gains and margin a configuration resolves to.
struct ResolvedSetup {
    StabilityCertificate cert;
    StabilityCertificate k_ss;
    double eps_star = 0.0;
    std::optional<SafeGrid> grid;
};

inline ResolvedSetup resolve(const RunConfig& c) {
    ResolvedSetup s;
    if (c.K.safest || c.K_ss.safest) s.grid = safe_grid(c.sys, c.spec, c.grid);
    auto pick = [&](const GainSpec& g, const char* what) {
        if (g.safest) return safest_linear_gain(*s.grid).cert;
        try {
            return certify_strong_stability(c.sys, g.K);
        } catch (const StabilityError& e) {
            throw FeasibilityError(std::string(what) + ": " + e.what());
        }
    };
    s.cert = pick(c.K, "controller.K");
    s.k_ss = pick(c.K_ss, "controller.K_ss");
    const auto ls = certify_linear_policy_safety(c.sys, s.k_ss, c.spec);
    if (!ls || !(ls->margin > 0.0)) throw FeasibilityError("controller.K_ss is not certified strictly safe");
    s.eps_star = ls->margin;
    return s;
}

inline AlgorithmParams params_for(const RunConfig& c, const ResolvedSetup& s, int T) {
    const CostStream probe(c.cost.make(c.sys.n(), c.sys.m()));
    return select_parameters(c.sys, s.cert, probe, s.eps_star, T, c.schedule, c.overrides);
}

inline DisturbanceStream make_stream(const RunConfig& c, std::uint64_t seed) {
    const DisturbanceSpec& d = c.disturbance;
    const CostModel cost = c.cost.make(c.sys.n(), c.sys.m());
    if (d.variant == "iid") return DisturbanceStream(IidUniform{seed}, c.sys.w_bar);
    if (d.variant == "constant") return DisturbanceStream(ConstantDisturbance{d.value}, c.sys.w_bar);
    if (d.variant == "sign_flip") return DisturbanceStream(SignFlip{d.period, seed}, c.sys.w_bar);
    if (d.variant == "adaptive") return DisturbanceStream(Adaptive{d.strategy}, c.sys.w_bar, cost, c.spec);
    throw ConfigError("disturbance.variant: unknown '" + d.variant + "'");
}

struct Execution {
    RunTrace trace;
    std::vector<CostModel> costs;  // as revealed, one per step
};

inline Execution execute(const RunConfig& c, const ResolvedSetup& s, DisturbanceStream& dist, int T, std::uint64_t seed, RunOptions opt = {}) {
    CostStream costs(c.cost.make(c.sys.n(), c.sys.m()));
    const AlgorithmParams p = params_for(c, s, T);
    if (!(s.k_ss.K - s.cert.K).isZero(0.0)) opt.k_ss = s.k_ss;
    opt.seed = seed;
    Execution e{run(c.sys, s.cert, c.spec, costs, dist, p, T, opt), {}};
    e.costs = costs.revealed();
    return e;
}

// ---------------------------------------------------------------------------
// Regret

struct RegretEntry {
    int T = 0;
    double algorithm_cost = 0.0;
    Mat K_star;
    double benchmark_cost = 0.0;
    double regret = 0.0;
    double regret_per_T = 0.0;
    bool benchmark_safe = false;
    AlgorithmParams params;
};

struct RegretReport {
    std::vector<RegretEntry> entries;
    double grid_step = 0.0;
    std::size_t grid_points = 0;
    std::size_t safe_points = 0;

    bool non_increasing() const {
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].regret_per_T > entries[i - 1].regret_per_T) return false;
        return true;
    }
};

/// Regret against the best safe grid gain under w_t = (w_bar, ..., w_bar).
inline RegretReport regret_curve(const RunConfig& c, const ResolvedSetup& s, const std::vector<int>& T_grid) {
    for (std::size_t i = 1; i < T_grid.size(); ++i)
        if (T_grid[i] <= T_grid[i - 1]) throw std::invalid_argument("regret_curve: T grid must be ascending");
    const SafeGrid grid = s.grid && s.grid->grid.step == c.grid.step && s.grid->grid.lower == c.grid.lower && s.grid->grid.upper == c.grid.upper
                              ? *s.grid
                              : safe_grid(c.sys, c.spec, c.grid);
    RegretReport rep;
    rep.grid_step = c.grid.step;
    rep.grid_points = grid.total;
    rep.safe_points = grid.safe.size();
    for (int T : T_grid) {
        DisturbanceStream dist(ConstantDisturbance{Vec::Constant(c.sys.n(), c.sys.w_bar)}, c.sys.w_bar);
        const Execution e = execute(c, s, dist, T, c.seed);
        std::vector<Vec> ws;
        for (const auto& st : e.trace.steps) ws.push_back(st.w);
        const Benchmark b = best_safe_linear(c.sys, c.spec, grid, e.costs, ws);
        RegretEntry r;
        r.T = T;
        r.algorithm_cost = e.trace.total_cost();
        r.K_star = b.K_star;
        r.benchmark_cost = b.total_cost;
        r.regret = r.algorithm_cost - r.benchmark_cost;
        r.regret_per_T = r.regret / static_cast<double>(T);
        r.benchmark_safe = b.trajectory_safe;
        r.params = e.trace.params;
        rep.entries.push_back(r);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Safety fuzzing

struct FuzzFailure {
    std::string variant;
    std::uint64_t seed = 0;
    int step = 0;
    std::string message;
};

struct FuzzSummary {
    int runs = 0;
    int steps = 0;
    int state_violations = 0;
    int input_violations = 0;
    int member_failures = 0;
    int diagnostic_failures = 0;
    std::vector<FuzzFailure> failures;
    double min_margin_x = std::numeric_limits<double>::infinity();
    double min_margin_u = std::numeric_limits<double>::infinity();
    double max_x = 0.0;
    double max_u = 0.0;
    double max_grad = 0.0;
    double max_step = 0.0;
    double max_trunc_gap = 0.0;
    std::optional<DiagnosticBounds> bounds;
    AlgorithmParams params;

    bool clean() const { return failures.empty(); }
};

/// The four stream families for a fuzz seed.
inline std::vector<DisturbanceStream> fuzz_streams(const RunConfig& c, std::uint64_t seed) {
    const Eigen::Index n = c.sys.n();
    Vec corner(n);
    for (Eigen::Index i = 0; i < n; ++i) corner(i) = (seed >> i) & 1U ? -c.sys.w_bar : c.sys.w_bar;
    std::vector<DisturbanceStream> out;
    out.emplace_back(IidUniform{seed}, c.sys.w_bar);
    out.emplace_back(ConstantDisturbance{corner}, c.sys.w_bar);
    out.emplace_back(SignFlip{1 + static_cast<int>(seed % 7), seed}, c.sys.w_bar);
    out.emplace_back(Adaptive{seed % 2 == 0 ? AdaptiveStrategy::Cost : AdaptiveStrategy::Boundary}, c.sys.w_bar, c.cost.make(n, c.sys.m()),
                     c.spec);
    return out;
}

/// Runs every stream family for seeds 0..n_seeds-1 and collects violations
/// and extremes. Runs stop at the first failed hard check.
inline FuzzSummary safety_fuzz(const RunConfig& c, const ResolvedSetup& s, int n_seeds, int T, RunOptions opt = {}) {
    FuzzSummary sum;
    sum.params = params_for(c, s, T);
    try {
        sum.bounds = theoretical_bounds(sum.params, default_class(s.cert), s.cert.kappa_B, c.sys);
    } catch (const BoundsUndefinedError&) {
    }
    for (int k = 0; k < n_seeds; ++k) {
        const std::uint64_t seed = static_cast<std::uint64_t>(k);
        for (DisturbanceStream& dist : fuzz_streams(c, seed)) {
            const std::string name = variant_name(dist.variant());
            ++sum.runs;
            try {
                const Execution e = execute(c, s, dist, T, seed, opt);
                for (const auto& st : e.trace.steps) {
                    ++sum.steps;
                    sum.min_margin_x = std::min(sum.min_margin_x, st.margin_x);
                    sum.min_margin_u = std::min(sum.min_margin_u, st.margin_u);
                    sum.max_x = std::max(sum.max_x, st.x.norm());
                    sum.max_u = std::max(sum.max_u, st.u.norm());
                    sum.max_grad = std::max(sum.max_grad, st.grad_norm);
                    sum.max_step = std::max(sum.max_step, st.step_norm);
                    sum.max_trunc_gap = std::max(sum.max_trunc_gap, st.trunc_gap);
                }
            } catch (const RunAbort& a) {
                switch (a.reason) {
                    case RunAbort::Reason::StateViolation: ++sum.state_violations; break;
                    case RunAbort::Reason::InputViolation: ++sum.input_violations; break;
                    case RunAbort::Reason::Membership: ++sum.member_failures; break;
                    default: ++sum.diagnostic_failures; break;
                }
                sum.failures.push_back({name, seed, a.step, a.what()});
            }
        }
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::ostream& exact(std::ostream& os) { return os << std::setprecision(17); }

inline void comment_block(std::ostream& os, const std::string& label, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        os << "# " << (first ? label + ": " : std::string(label.size() + 2, ' ')) << line << '\n';
        first = false;
    }
}

inline std::string gain_string(const Mat& K) {
    std::ostringstream os;
    exact(os);
    for (Eigen::Index i = 0; i < K.size(); ++i) os << (i ? ";" : "") << K.reshaped<Eigen::RowMajor>()(i);
    return os.str();
}

}  // namespace detail

/// t, x0.., u0.., w0.., cost, cum_cost, safe_x, safe_u, step_norm, grad_norm.
inline void write_trace_csv(std::ostream& os, const RunTrace& tr, const nlohmann::json& config = nlohmann::json()) {
    detail::exact(os);
    if (!config.is_null()) detail::comment_block(os, "config", config.dump());
    os << "# seed: " << tr.seed << '\n';
    detail::comment_block(os, "params", tr.params.describe());
    const Eigen::Index n = tr.sys.n();
    const Eigen::Index m = tr.sys.m();
    os << 't';
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i;
    for (Eigen::Index i = 0; i < m; ++i) os << ",u" << i;
    for (Eigen::Index i = 0; i < n; ++i) os << ",w" << i;
    os << ",cost,cum_cost,safe_x,safe_u,step_norm,grad_norm\n";
    for (const auto& s : tr.steps) {
        os << s.t;
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.x(i);
        for (Eigen::Index i = 0; i < m; ++i) os << ',' << s.u(i);
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.w(i);
        os << ',' << s.cost << ',' << s.cum_cost << ',' << int(s.safe_x) << ',' << int(s.safe_u) << ',' << s.step_norm << ',' << s.grad_norm << '\n';
    }
}

struct TrajectoryRow {
    int t;
    Vec x;
    Vec u;
    double cost;
    std::string controller;
};

inline std::vector<TrajectoryRow> linear_rows(const LtiSystem& sys, const Mat& K, const std::vector<CostModel>& costs, const std::vector<Vec>& ws,
                                              const std::string& name) {
    std::vector<TrajectoryRow> rows;
    Vec x = Vec::Zero(sys.n());
    for (std::size_t t = 0; t < ws.size(); ++t) {
        const Vec u = -K * x;
        rows.push_back({static_cast<int>(t), x, u, costs[t].evaluate(x, u), name});
        x = sys.A * x + sys.B * u + ws[t];
    }
    return rows;
}

/// t, x1.., u (or u1..), cost, controller.
inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows, const std::string& header) {
    detail::exact(os);
    if (rows.empty()) throw std::invalid_argument("trajectory csv: no rows");
    std::istringstream in(header);
    for (std::string line; std::getline(in, line);) os << "# " << line << '\n';
    const Eigen::Index n = rows.front().x.size();
    const Eigen::Index m = rows.front().u.size();
    os << 't';
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    if (m == 1) os << ",u";
    else
        for (Eigen::Index i = 0; i < m; ++i) os << ",u" << i + 1;
    os << ",cost,controller\n";
    for (const auto& r : rows) {
        os << r.t;
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << r.x(i);
        for (Eigen::Index i = 0; i < m; ++i) os << ',' << r.u(i);
        os << ',' << r.cost << ',' << r.controller << '\n';
    }
}

/// T, algorithm_cost, benchmark_cost, regret, regret_per_T, k_star, benchmark_safe.
inline void write_regret_csv(std::ostream& os, const RegretReport& rep, const std::string& header) {
    detail::exact(os);
    std::istringstream in(header);
    for (std::string line; std::getline(in, line);) os << "# " << line << '\n';
    os << "# grid_step: " << rep.grid_step << " grid_points: " << rep.grid_points << " safe_points: " << rep.safe_points << '\n';
    os << "T,algorithm_cost,benchmark_cost,regret,regret_per_T,k_star,benchmark_safe\n";
    for (const auto& e : rep.entries) {
        os << e.T << ',' << e.algorithm_cost << ',' << e.benchmark_cost << ',' << e.regret << ',' << e.regret_per_T << ','
           << detail::gain_string(e.K_star) << ',' << int(e.benchmark_safe) << '\n';
    }
}

inline std::string trajectory_plot_script(const std::string& csv_name, const std::string& title) {
    std::ostringstream os;
    os << "import csv\nimport math\nimport matplotlib.pyplot as plt\n\n"
       << "rows = [r for r in csv.reader(line for line in open('" << csv_name << "') if not line.startswith('#'))]\n"
       << "head, rows = rows[0], rows[1:]\n"
       << "ix1, ix2, ic = head.index('x1'), head.index('x2'), head.index('controller')\n"
       << "fig, ax = plt.subplots(figsize=(5, 5))\n"
       << "for name in sorted({r[ic] for r in rows}):\n"
       << "    xs = [(float(r[ix1]), float(r[ix2])) for r in rows if r[ic] == name]\n"
       << "    ax.plot([p[0] for p in xs], [p[1] for p in xs], marker='o', ms=3, label=name)\n"
       << "th = [2 * math.pi * k / 400 for k in range(401)]\n"
       << "ax.plot([math.cos(a) for a in th], [math.sin(a) for a in th], 'k--', lw=1, label='|x| = 1')\n"
       << "ax.set_aspect('equal')\nax.set_xlabel('x1')\nax.set_ylabel('x2')\nax.set_title('" << title << "')\nax.legend()\n"
       << "fig.savefig('" << csv_name.substr(0, csv_name.rfind('.')) << ".png', dpi=150, bbox_inches='tight')\n";
    return os.str();
}

inline std::string regret_plot_script(const std::string& csv_name) {
    std::ostringstream os;
    os << "import csv\nimport matplotlib.pyplot as plt\n\n"
       << "rows = [r for r in csv.reader(line for line in open('" << csv_name << "') if not line.startswith('#'))]\n"
       << "head, rows = rows[0], rows[1:]\n"
       << "T = [int(r[head.index('T')]) for r in rows]\n"
       << "avg = [float(r[head.index('regret_per_T')]) for r in rows]\n"
       << "fig, ax = plt.subplots(figsize=(6, 4))\n"
       << "ax.plot(T, avg, marker='o')\nax.axhline(0.0, color='k', lw=0.8)\nax.set_xscale('log')\n"
       << "ax.set_xlabel('T')\nax.set_ylabel('Reg_T / T')\nax.set_title('Average regret')\n"
       << "fig.savefig('" << csv_name.substr(0, csv_name.rfind('.')) << ".png', dpi=150, bbox_inches='tight')\n";
    return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + p.string() + "'");
}

struct FigureRun {
    Execution ogd;
    std::vector<TrajectoryRow> rows;
};

/// OGD-BZC and the baseline gain on the same disturbances, T = 30.
inline FigureRun figure_trajectories(const RunConfig& c, const ResolvedSetup& s, DisturbanceStream& dist, int T = 30) {
    FigureRun f{execute(c, s, dist, T, c.seed), {}};
    std::vector<Vec> ws;
    for (const auto& st : f.ogd.trace.steps) {
        f.rows.push_back({st.t, st.x, st.u, st.cost, "ogd_bzc"});
        ws.push_back(st.w);
    }
    const Mat K = c.baseline_K ? *c.baseline_K : s.cert.K;
    for (auto& r : linear_rows(c.sys, K, f.ogd.costs, ws, "linear")) f.rows.push_back(std::move(r));
    return f;
}

inline const std::vector<int>& figure2_horizons() {
    static const std::vector<int> T{30, 100, 300, 1000};
    return T;
}

/// Writes the CSV and plot script for fig1a, fig1b or fig2; returns the paths.
inline std::vector<std::filesystem::path> reproduce(const std::string& figure, const std::filesystem::path& out_dir,
                                                    const RunConfig& c = section6_config()) {
    std::filesystem::create_directories(out_dir);
    const ResolvedSetup s = resolve(c);
    std::ostringstream header;
    header << "figure: " << figure << "\nconfig: " << c.source.dump() << "\nseed: " << c.seed << "\nK: " << detail::gain_string(s.cert.K)
           << "\neps_star: " << std::setprecision(17) << s.eps_star;
    const std::filesystem::path csv = out_dir / (figure + ".csv");
    const std::filesystem::path py = out_dir / (figure + "_plot.py");
    std::ostringstream body;
    if (figure == "fig1a" || figure == "fig1b") {
        DisturbanceStream dist = figure == "fig1a" ? DisturbanceStream(IidUniform{c.seed}, c.sys.w_bar)
                                                   : DisturbanceStream(ConstantDisturbance{Vec::Constant(c.sys.n(), c.sys.w_bar)}, c.sys.w_bar);
        header << "\ndisturbance: " << (figure == "fig1a" ? "iid uniform" : "constant w_bar");
        const FigureRun f = figure_trajectories(c, s, dist);
        header << "\nparams: " << f.ogd.trace.params.describe();
        write_trajectory_csv(body, f.rows, header.str());
        write_file(csv, body.str());
        write_file(py, trajectory_plot_script(csv.filename().string(), figure == "fig1a" ? "i.i.d. disturbances" : "constant disturbances"));
    } else if (figure == "fig2") {
        const RegretReport rep = regret_curve(c, s, figure2_horizons());
        write_regret_csv(body, rep, header.str());
        write_file(csv, body.str());
        write_file(py, regret_plot_script(csv.filename().string()));
    } else {
        throw ConfigError("unknown figure '" + figure + "' (expected fig1a, fig1b or fig2)");
    }
    return {csv, py};
}

}  // namespace ogdbzc

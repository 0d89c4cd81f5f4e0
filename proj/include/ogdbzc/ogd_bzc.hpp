#pragma once

// Projected online gradient descent over the safe policy set: parameter
// schedules, the approximate-cost gradient, the control loop and the
// closed-form diagnostic bounds.

#include "ogdbzc/safe_set.hpp"

#include <concepts>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ogdbzc {

enum class Schedule { Theorem, Experiment, Manual };

inline std::string to_string(Schedule s) {
    switch (s) {
        case Schedule::Theorem: return "theorem";
        case Schedule::Experiment: return "experiment";
        case Schedule::Manual: return "manual";
    }
    return "?";
}

struct TheoremConstants {
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
};

/// Constants of the safety theorem for a decay class, input gain bound,
/// disturbance bound and cost growth constant.
inline TheoremConstants theorem_constants(const DacClass& cls, double kappa_B, double w_bar, double G) {
    const double k = cls.kappa;
    const double k3 = k * k * k;
    const double k5 = k3 * k * k;
    const double g = cls.gamma;
    const double a = cls.a;
    TheoremConstants c;
    c.c1 = w_bar * k3 * (2.0 * k3 + 2.0 * a * k3 * kappa_B + a) / g;
    c.c2 = 4.0 * G * w_bar * w_bar * w_bar * (k3 + 2.0 * a * k3 * kappa_B) * (1.0 + k) * k5 * kappa_B * kappa_B / std::pow(g, 4);
    c.c3 = 2.0 * w_bar * k5;
    return c;
}

struct AlgorithmParams {
    int H = 1;
    double eta = 0.0;
    double epsilon = 0.0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    double eps3 = 0.0;
    double eps_star = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
    double G = 0.0;
    double h_min = 0.0;
    Schedule schedule = Schedule::Experiment;
    bool safety_window = false;  // eps1 + eps2 <= eps <= eps* - eps1 - eps3
    bool regret_window = false;  // additionally eps < eps*/2 - eps1 - eps3
    std::vector<std::string> warnings;

    std::string describe() const {
        std::ostringstream os;
        os << "schedule=" << to_string(schedule) << " H=" << H << " eta=" << eta << " epsilon=" << epsilon << " eps1=" << eps1
           << " eps2=" << eps2 << " eps3=" << eps3 << " eps*=" << eps_star << " c1=" << c1 << " c2=" << c2 << " c3=" << c3
           << " G=" << G << " H_min=" << h_min;
        return os.str();
    }
};

/// The parameter window is empty; carries every computed margin.
class ParameterWindowError : public std::runtime_error {
public:
    ParameterWindowError(const std::string& what, AlgorithmParams p) : std::runtime_error(what + " [" + p.describe() + "]"), params(std::move(p)) {}
    AlgorithmParams params;
};

struct ScheduleOptions {
    std::optional<int> H;
    std::optional<double> eta;
    std::optional<double> epsilon;
    /// Caps the experiment buffer at this fraction of eps*.
    std::optional<double> epsilon_cap_fraction;
};

namespace detail {

inline double decay_rate(const DacClass& cls) { return std::max(0.0, 1.0 - cls.gamma); }

inline double memory_lower_bound(const DacClass& cls) {
    const double q = decay_rate(cls);
    if (q <= 0.0) return 0.0;
    return std::log(2.0 * cls.kappa * cls.kappa) / std::log(1.0 / q);
}

inline void fill_margins(AlgorithmParams& p, Eigen::Index n, Eigen::Index m, const DacClass& cls) {
    const double qH = std::pow(decay_rate(cls), p.H);
    const double nn = static_cast<double>(n);
    const double mm = static_cast<double>(m);
    const double H = static_cast<double>(p.H);
    p.eps1 = p.c1 * H * qH;
    p.eps2 = p.c2 * std::sqrt(mm * nn * nn * nn) * p.eta * H * H;
    p.eps3 = p.c3 * std::sqrt(nn) * qH;
    p.safety_window = p.eps1 + p.eps2 <= p.epsilon && p.epsilon <= p.eps_star - p.eps1 - p.eps3;
    p.regret_window = p.safety_window && p.epsilon < 0.5 * p.eps_star - p.eps1 - p.eps3;
}

/// H for a schedule: overridden, logarithmic in T, or large enough for the
/// truncation and lifting margins to fit under eps*.
inline int schedule_memory(const LtiSystem& sys, const StabilityCertificate& cert, double eps_star, int T, Schedule schedule,
                           const ScheduleOptions& opt) {
    if (opt.H) return *opt.H;
    const double Td = static_cast<double>(T);
    switch (schedule) {
        case Schedule::Theorem: {
            const DacClass cls = default_class(cert);
            const double q = decay_rate(cls);
            if (q <= 0.0) return 1;
            const TheoremConstants c = theorem_constants(cls, cert.kappa_B, sys.w_bar, 0.0);
            const double n = static_cast<double>(sys.n());
            const double h = std::log((8.0 * c.c1 * Td + 4.0 * c.c3 * std::sqrt(n)) / eps_star) / std::log(1.0 / q);
            const int h_floor = std::max(1, static_cast<int>(std::ceil(memory_lower_bound(cls) - 1e-12)));
            return std::max(h_floor, static_cast<int>(std::ceil(h)));
        }
        case Schedule::Experiment: return std::max(1, static_cast<int>(std::floor(std::log(Td))));
        case Schedule::Manual: throw std::invalid_argument("select_parameters: manual schedule needs H, eta and epsilon");
    }
    return 1;
}

}  // namespace detail

/// The closed-form bounds on |x_t|, |u_t|, the gradient norm and the
/// diameter of the decay set.
struct DiagnosticBounds {
    double b_x = 0.0;
    double b_u = 0.0;
    double G_f = 0.0;
    double delta = 0.0;
};

class BoundsUndefinedError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline DiagnosticBounds theoretical_bounds(const AlgorithmParams& p, const DacClass& cls, double kappa_B, const LtiSystem& sys) {
    const double k = cls.kappa;
    const double g = cls.gamma;
    const double q = detail::decay_rate(cls);
    const double H = static_cast<double>(p.H);
    const double qH = std::pow(q, p.H);
    if (!(k * k * qH < 1.0)) {
        throw BoundsUndefinedError("diagnostic bounds need kappa^2 (1 - gamma)^H < 1, got " + std::to_string(k * k * qH));
    }
    const double n = static_cast<double>(sys.n());
    const double m = static_cast<double>(sys.m());
    const double w = sys.w_bar;
    const double dim = std::max(std::sqrt(n), std::sqrt(m));
    auto bx = [&](double a) { return w * std::sqrt(n) * (k * k + a * k * k * kappa_B * H) / ((1.0 - k * k * qH) * g); };
    auto bu = [&](double a) { return k * bx(a) + w * dim * a / g; };

    DiagnosticBounds b;
    b.b_x = bx(cls.a);
    b.b_u = bu(cls.a);
    const double at = 2.0 * cls.a;
    const double k3 = k * k * k;
    const double b_tilde = std::max({bx(at), bu(at), 2.0 * w * std::sqrt(n) * (k3 + at * k3 * kappa_B * H) / g + w * std::sqrt(m * n) * at / g});
    b.G_f = 2.0 * p.G * b_tilde * std::sqrt(n) * w * (1.0 + k) * k * k * kappa_B * std::sqrt(H) / g;
    b.delta = 2.0 * std::sqrt(m) * cls.a / g;
    return b;
}

/// Memory size, step size and buffer for horizon T.
inline AlgorithmParams select_parameters(const LtiSystem& sys, const StabilityCertificate& cert, double G, double eps_star, int T,
                                         Schedule schedule, const ScheduleOptions& opt = {}) {
    if (!(eps_star > 0.0)) throw std::invalid_argument("select_parameters: eps_star must be > 0");
    if (T < 1) throw std::invalid_argument("select_parameters: T must be >= 1");
    if (!(G >= 0.0)) throw std::invalid_argument("select_parameters: G must be >= 0");
    const DacClass cls = default_class(cert);
    const TheoremConstants c = theorem_constants(cls, cert.kappa_B, sys.w_bar, G);
    AlgorithmParams p;
    p.schedule = schedule;
    p.eps_star = eps_star;
    p.c1 = c.c1;
    p.c2 = c.c2;
    p.c3 = c.c3;
    p.G = G;
    p.h_min = detail::memory_lower_bound(cls);
    const double Td = static_cast<double>(T);
    const double n = static_cast<double>(sys.n());

    p.H = detail::schedule_memory(sys, cert, eps_star, T, schedule, opt);
    switch (schedule) {
        case Schedule::Theorem: {
            const double H = static_cast<double>(p.H);
            p.eta = opt.eta ? *opt.eta : 1.0 / (n * std::sqrt(Td * H * H * H));
            detail::fill_margins(p, sys.n(), sys.m(), cls);
            p.epsilon = opt.epsilon ? *opt.epsilon : p.eps1 + p.eps2;
            break;
        }
        case Schedule::Experiment: {
            const double lt = std::log(Td);
            p.eta = opt.eta ? *opt.eta : 1.0 / (std::sqrt(Td) * std::max(lt, 1.0));
            p.epsilon = opt.epsilon ? *opt.epsilon : lt / std::sqrt(Td);
            if (!opt.epsilon && opt.epsilon_cap_fraction) p.epsilon = std::min(p.epsilon, *opt.epsilon_cap_fraction * eps_star);
            break;
        }
        case Schedule::Manual: {
            if (!opt.eta || !opt.epsilon) throw std::invalid_argument("select_parameters: manual schedule needs H, eta and epsilon");
            p.eta = *opt.eta;
            p.epsilon = *opt.epsilon;
            break;
        }
    }
    if (p.H < 1) throw std::invalid_argument("select_parameters: H must be >= 1");
    if (!(p.eta > 0.0)) throw std::invalid_argument("select_parameters: eta must be > 0");
    if (!(p.epsilon >= 0.0)) throw std::invalid_argument("select_parameters: epsilon must be >= 0");
    detail::fill_margins(p, sys.n(), sys.m(), cls);

    if (p.H < p.h_min) p.warnings.push_back("H = " + std::to_string(p.H) + " is below the memory lower bound " + std::to_string(p.h_min));
    if (!p.safety_window) p.warnings.push_back("buffer outside the certified safety window; schedule is heuristic");
    else if (!p.regret_window) p.warnings.push_back("buffer outside the regret window");
    if (schedule == Schedule::Theorem && !p.safety_window) throw ParameterWindowError("empty parameter window", p);
    if (schedule == Schedule::Theorem && !p.regret_window) throw ParameterWindowError("buffer violates the regret window", p);
    return p;
}

/// A convex differentiable stage cost. growth(D) is a constant G with |c|,
/// |grad_x c|, |grad_u c| <= G D on the ball of radius D.
struct CostModel {
    std::function<double(const Vec&, const Vec&)> evaluate;
    std::function<Vec(const Vec&, const Vec&)> gradient_x;
    std::function<Vec(const Vec&, const Vec&)> gradient_u;
    std::function<double(double)> growth;

    double G(double D) const { return growth(D); }

    /// q |x|^2 + r |u|^2.
    static CostModel quadratic(double q = 1.0, double r = 1.0) {
        if (!(q >= 0.0 && r >= 0.0)) throw std::invalid_argument("quadratic cost: weights must be >= 0");
        CostModel c;
        c.evaluate = [q, r](const Vec& x, const Vec& u) { return q * x.squaredNorm() + r * u.squaredNorm(); };
        c.gradient_x = [q](const Vec& x, const Vec&) -> Vec { return 2.0 * q * x; };
        c.gradient_u = [r](const Vec&, const Vec& u) -> Vec { return 2.0 * r * u; };
        c.growth = [q, r](double D) { return std::max({(q + r) * D, 2.0 * q, 2.0 * r}); };
        return c;
    }

    /// Sum over coordinates z of s(z - d) + s(-z - d) with s(v) = log(1 + e^{beta v}) / beta,
    /// a smoothed hinge on |z| - d. n and m size the growth constant.
    static CostModel softplus_hinge(double beta, double dead_zone, Eigen::Index n, Eigen::Index m) {
        if (!(beta > 0.0) || !(dead_zone >= 0.0)) throw std::invalid_argument("softplus hinge: need beta > 0 and dead_zone >= 0");
        auto sp = [beta](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-beta * std::abs(v))) / beta; };
        auto sig = [beta](double v) { return 0.5 * (1.0 + std::tanh(0.5 * beta * v)); };
        auto value = [sp, dead_zone](const Vec& z) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < z.size(); ++i) s += sp(z(i) - dead_zone) + sp(-z(i) - dead_zone);
            return s;
        };
        auto grad = [sig, dead_zone](const Vec& z) -> Vec {
            Vec g(z.size());
            for (Eigen::Index i = 0; i < z.size(); ++i) g(i) = sig(z(i) - dead_zone) - sig(-z(i) - dead_zone);
            return g;
        };
        CostModel c;
        c.evaluate = [value](const Vec& x, const Vec& u) { return value(x) + value(u); };
        c.gradient_x = [grad](const Vec& x, const Vec&) { return grad(x); };
        c.gradient_u = [grad](const Vec&, const Vec& u) { return grad(u); };
        // Each coordinate adds at most |z| + 2 log 2 / beta, with slope at most 1.
        const double sn = std::sqrt(static_cast<double>(n));
        const double sm = std::sqrt(static_cast<double>(m));
        const double offset = 2.0 * static_cast<double>(n + m) * std::log(2.0) / beta;
        c.growth = [sn, sm, offset](double D) {
            if (!(D > 0.0)) throw std::invalid_argument("softplus hinge growth: D must be > 0");
            return std::max({sn + sm + offset / D, sn / D, sm / D});
        };
        return c;
    }
};

/// Stage costs revealed one at a time, each only after the input for that
/// step has been committed.
class CostStream {
public:
    using Generator = std::function<CostModel(int)>;

    CostStream(Generator gen, std::function<double(double)> growth) : gen_(std::move(gen)), growth_(std::move(growth)) {}
    explicit CostStream(const CostModel& fixed) : CostStream([fixed](int) { return fixed; }, fixed.growth) {}

    void commit(int t) {
        if (t != committed_ + 1) throw std::logic_error("cost stream: steps must be committed in order");
        committed_ = t;
    }

    const CostModel& reveal(int t) {
        if (t != committed_) throw std::logic_error("cost stream: cost for step " + std::to_string(t) + " requested before its input was committed");
        if (static_cast<int>(revealed_.size()) == t) revealed_.push_back(gen_(t));
        return revealed_.at(static_cast<std::size_t>(t));
    }

    /// Costs already revealed, for hindsight evaluation.
    const std::vector<CostModel>& revealed() const { return revealed_; }

    double G(double D) const { return growth_(D); }

private:
    Generator gen_;
    std::function<double(double)> growth_;
    int committed_ = -1;
    std::vector<CostModel> revealed_;
};

/// As above, with G taken from the cost's growth on the ball of radius
/// max(b_x, b_u) for the scheduled memory size.
inline AlgorithmParams select_parameters(const LtiSystem& sys, const StabilityCertificate& cert, const CostStream& costs, double eps_star,
                                         int T, Schedule schedule, const ScheduleOptions& opt = {}) {
    if (!(eps_star > 0.0)) throw std::invalid_argument("select_parameters: eps_star must be > 0");
    if (T < 1) throw std::invalid_argument("select_parameters: T must be >= 1");
    AlgorithmParams probe;
    probe.H = detail::schedule_memory(sys, cert, eps_star, T, schedule, opt);
    const DiagnosticBounds b = theoretical_bounds(probe, default_class(cert), cert.kappa_B, sys);
    return select_parameters(sys, cert, costs.G(std::max(b.b_x, b.b_u)), eps_star, T, schedule, opt);
}

/// Gradient of M -> c(x_tilde(M), u_tilde(M)) with the history frozen.
inline DacWeights approx_cost_gradient(const CostModel& cost, const DacModel& model, const DacWeights& w, const DisturbanceHistory& hist) {
    const ResponseMatrices r = response_matrices_unchecked(model, w);
    const auto [x, u] = surrogate(r, hist);
    const Vec gx = cost.gradient_x(x, u);
    const Vec gu = cost.gradient_u(x, u);
    const std::size_t L = static_cast<std::size_t>(r.lags());
    std::vector<Mat> Sx(L);
    std::vector<Mat> Su(L);
    for (std::size_t k = 0; k < L; ++k) {
        const Vec lag = hist.lag(static_cast<int>(k + 1));
        Sx[k] = gx * lag.transpose();
        Su[k] = gu * lag.transpose();
    }
    return adjoint(model, Sx, Su);
}

/// What a disturbance source may look at when choosing w_t.
struct StepView {
    int t;
    const Vec& x;
    const Vec& u;
    const DacWeights& weights;
    const DisturbanceHistory& history;
    const DacModel& model;
    const LtiSystem& sys;
};

template <class S>
concept DisturbanceSource = requires(S s, const StepView& v) {
    { s.next(v) } -> std::convertible_to<Vec>;
};

struct StepRecord {
    int t = 0;
    Vec x;
    Vec u;
    Vec w;  // as drawn; the controller sees the value recovered from x_{t+1}
    double cost = 0.0;
    double cum_cost = 0.0;
    bool member_ok = false;
    bool safe_x = false;
    bool safe_u = false;
    double margin_x = 0.0;
    double margin_u = 0.0;
    double step_norm = 0.0;  // |M_{t+1} - M_t|_F
    double grad_norm = 0.0;
    double trunc_gap = 0.0;  // |x_t - x_tilde_t|_inf
};

struct RunTrace {
    AlgorithmParams params;
    LtiSystem sys;
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    DacWeights final_weights;
    std::optional<DiagnosticBounds> bounds;
    int projections = 0;

    double total_cost() const { return steps.empty() ? 0.0 : steps.back().cum_cost; }
    bool all_safe() const {
        for (const auto& s : steps)
            if (!s.safe_x || !s.safe_u || !s.member_ok) return false;
        return true;
    }
};

/// A run stopped on a failed hard check; carries the trace up to that step.
class RunAbort : public std::runtime_error {
public:
    enum class Reason { ModelMismatch, StateViolation, InputViolation, Membership, Diagnostic };

    RunAbort(Reason r, int step, const std::string& what, RunTrace tr)
        : std::runtime_error("step " + std::to_string(step) + ": " + what), reason(r), step(step), trace(std::move(tr)) {}

    Reason reason;
    int step;
    RunTrace trace;
};

struct RunOptions {
    /// Reference policy for the seed; defaults to the base certificate.
    std::optional<StabilityCertificate> k_ss;
    /// The true plant, when it differs from the model.
    std::optional<LtiSystem> plant;
    /// Asserts the slow-motion, truncation and diagnostic bounds each step.
    bool check_diagnostics = true;
    ProjectionOptions projection;
    std::uint64_t seed = 0;
};

/// Runs steps t = 0..T from x_0 = 0.
template <DisturbanceSource Dist>
RunTrace run(const LtiSystem& sys, const StabilityCertificate& cert, const SafetySpec& spec, CostStream& costs, Dist& dist,
             const AlgorithmParams& params, int T, const RunOptions& opt = {}) {
    if (T < 0) throw std::invalid_argument("run: T must be >= 0");
    const StabilityCertificate& k_ss = opt.k_ss ? *opt.k_ss : cert;
    const DacClass cls = opt.k_ss ? common_class(cert, *opt.k_ss) : default_class(cert);
    const DacModel model(sys, cert, params.H, cls);
    const SafePolicySet omega(model, spec, params.epsilon, sys.w_bar);
    const DacWeights anchor = feasible_seed(omega, k_ss);
    const LtiSystem& plant = opt.plant ? *opt.plant : sys;

    RunTrace trace;
    trace.params = params;
    trace.sys = sys;
    trace.seed = opt.seed;
    trace.steps.reserve(static_cast<std::size_t>(T) + 1);
    if (opt.check_diagnostics) {
        try {
            trace.bounds = theoretical_bounds(params, cls, cert.kappa_B, sys);
        } catch (const BoundsUndefinedError&) {
        }
    }
    const double slack = 1e-9;
    auto abort = [&](RunAbort::Reason r, int t, const std::string& what) {
        trace.final_weights = DacWeights{};
        throw RunAbort(r, t, what, trace);
    };

    CutPool pool;
    DacWeights M = anchor;
    DisturbanceHistory hist(params.H, sys.n(), sys.w_bar);
    std::deque<Vec> past_x;  // x_{t-1}, ..., x_{t-H}
    Vec x = Vec::Zero(sys.n());
    double cum = 0.0;
    for (int t = 0; t <= T; ++t) {
        StepRecord rec;
        rec.t = t;
        rec.x = x;
        rec.member_ok = omega.member(M);
        if (!rec.member_ok) abort(RunAbort::Reason::Membership, t, "iterate left the safe policy set");

        const Vec u = control_input(model, M, x, hist);
        costs.commit(t);
        rec.u = u;
        rec.safe_x = contains(spec.state_set, x, 0.0);
        rec.safe_u = contains(spec.input_set, u, 0.0);
        rec.margin_x = boundary_margin(spec.state_set, x);
        rec.margin_u = boundary_margin(spec.input_set, u);

        const Vec w_drawn = dist.next(StepView{t, x, u, M, hist, model, sys});
        const Vec x_next = step(plant, x, u, w_drawn);
        const CostModel& c = costs.reveal(t);
        rec.cost = c.evaluate(x, u);
        cum += rec.cost;
        rec.cum_cost = cum;

        if (static_cast<int>(past_x.size()) == params.H) rec.trunc_gap = inf_norm(model.power(params.H) * past_x.back());
        const DacWeights grad = approx_cost_gradient(c, model, M, hist);
        rec.grad_norm = grad.norm();

        rec.w = w_drawn;
        Vec w;
        try {
            w = recover_disturbance(sys, x, u, x_next);
        } catch (const ModelMismatchError& e) {
            trace.steps.push_back(rec);
            abort(RunAbort::Reason::ModelMismatch, t, e.what());
        }
        hist.push(w);

        DacWeights next = omega.project(M - params.eta * grad, anchor, opt.projection, nullptr, &pool);
        ++trace.projections;
        rec.step_norm = (next - M).norm();
        trace.steps.push_back(rec);

        if (!rec.safe_x) abort(RunAbort::Reason::StateViolation, t, "state left the safety set");
        if (!rec.safe_u) abort(RunAbort::Reason::InputViolation, t, "input left the safety set");
        if (opt.check_diagnostics) {
            if (rec.trunc_gap > params.eps1 + slack) abort(RunAbort::Reason::Diagnostic, t, "truncation gap exceeds eps1");
            if (trace.bounds) {
                const auto& b = *trace.bounds;
                if (x.norm() > b.b_x + slack) abort(RunAbort::Reason::Diagnostic, t, "|x_t| exceeds b_x");
                if (u.norm() > b.b_u + slack) abort(RunAbort::Reason::Diagnostic, t, "|u_t| exceeds b_u");
                if (rec.grad_norm > b.G_f + slack) abort(RunAbort::Reason::Diagnostic, t, "gradient norm exceeds G_f");
                if (rec.step_norm > params.eta * b.G_f + slack) abort(RunAbort::Reason::Diagnostic, t, "weight step exceeds eta G_f");
            }
        }

        past_x.push_front(x);
        if (static_cast<int>(past_x.size()) > params.H) past_x.pop_back();
        M = std::move(next);
        x = x_next;
    }
    trace.final_weights = M;
    return trace;
}

}  // namespace ogdbzc

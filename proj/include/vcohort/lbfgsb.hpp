#pragma once

// Box-constrained limited-memory BFGS minimizer.
//
// Bounds are honored by projection: variables sitting on a bound with the
// gradient pointing outward are frozen for the iteration, the two-loop
// recursion runs on the remaining free variables, and the backtracking line
// search follows the projected path P(x + a d).

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include <Eigen/Dense>

namespace vcohort {

struct LbfgsbOptions {
    int max_evals = 500;
    double grad_tol = 1e-6;  // on the projected-gradient infinity norm
    int memory = 10;
    double armijo = 1e-4;
    int max_backtracks = 60;
};

struct LbfgsbResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int evals = 0;
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
};

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi) {
    return (project_box(x - g, lo, hi) - x).lpNorm<Eigen::Infinity>();
}

// `fg(x, g)` returns f(x) and writes the gradient into g.
template <typename Objective>
LbfgsbResult minimize_box(Objective&& fg, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi, const LbfgsbOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    LbfgsbResult res;
    res.x = project_box(x0, lo, hi);
    Eigen::VectorXd g(n);
    res.f = fg(res.x, g);
    res.evals = 1;

    struct Pair {
        Eigen::VectorXd s, y;
        double rho;
    };
    std::deque<Pair> memory;
    Eigen::VectorXd gn(n);

    while (true) {
        if (projected_gradient_norm(res.x, g, lo, hi) < opt.grad_tol) {
            res.converged = true;
            break;
        }
        if (res.evals >= opt.max_evals) break;

        Eigen::VectorXd free = Eigen::VectorXd::Ones(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if ((res.x[i] <= lo[i] && g[i] > 0.0) || (res.x[i] >= hi[i] && g[i] < 0.0)) free[i] = 0.0;
        }
        const Eigen::VectorXd gfree = g.cwiseProduct(free);

        Eigen::VectorXd q = gfree;
        std::vector<double> alphas(memory.size());
        for (std::size_t m = memory.size(); m-- > 0;) {
            const Pair& p = memory[m];
            alphas[m] = p.rho * p.s.cwiseProduct(free).dot(q);
            q -= alphas[m] * p.y.cwiseProduct(free);
        }
        if (!memory.empty()) {
            const Pair& last = memory.back();
            q *= last.s.dot(last.y) / last.y.squaredNorm();
        }
        for (std::size_t m = 0; m < memory.size(); ++m) {
            const Pair& p = memory[m];
            const double beta = p.rho * p.y.cwiseProduct(free).dot(q);
            q += (alphas[m] - beta) * p.s.cwiseProduct(free);
        }
        Eigen::VectorXd dir = -q.cwiseProduct(free);
        if (!(g.dot(dir) < 0.0) || !dir.allFinite()) {
            dir = -gfree;
            memory.clear();
        }

        double step = 1.0;
        if (memory.empty()) step = std::min(1.0, 1.0 / std::max(1e-12, dir.lpNorm<Eigen::Infinity>()));

        bool accepted = false;
        Eigen::VectorXd xn;
        double fn = 0.0;
        for (int bt = 0; bt < opt.max_backtracks && res.evals < opt.max_evals; ++bt, step *= 0.5) {
            xn = project_box(res.x + step * dir, lo, hi);
            if ((xn - res.x).lpNorm<Eigen::Infinity>() == 0.0) break;
            fn = fg(xn, gn);
            ++res.evals;
            if (std::isfinite(fn) && fn <= res.f + opt.armijo * g.dot(xn - res.x)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            res.line_search_failed = true;
            break;
        }

        Pair p{xn - res.x, gn - g, 0.0};
        const double sy = p.s.dot(p.y);
        if (sy > 1e-12 * p.y.squaredNorm() && sy > 0.0) {
            p.rho = 1.0 / sy;
            memory.push_back(std::move(p));
            if (static_cast<int>(memory.size()) > opt.memory) memory.pop_front();
        }
        res.x = xn;
        res.f = fn;
        g = gn;
        ++res.iterations;
    }
    return res;
}

}  // namespace vcohort

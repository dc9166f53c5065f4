#include "bhkle/swarm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <random>
#include <sstream>
#include <thread>

#include "bhkle/errors.hpp"

namespace bhkle {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void evaluate_all(const SwarmObjective& objective, const std::vector<Eigen::VectorXd>& x,
                  std::vector<double>& values, int threads) {
    const std::size_t n = x.size();
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) values[i] = objective(x[i]);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                    try {
                        values[i] = objective(x[i]);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

SwarmResult minimize_swarm(const SwarmObjective& objective, const Eigen::VectorXd& lower,
                           const Eigen::VectorXd& upper, const SwarmOptions& options) {
    const auto dim = lower.size();
    if (dim == 0 || upper.size() != dim) throw InputError("swarm box bounds have mismatched sizes");
    if (((upper - lower).array() <= 0.0).any()) throw InputError("swarm box has empty extent");
    if (options.swarm_size < 2) throw InputError("swarm needs at least 2 particles");
    if (options.iterations < 0) throw InputError("negative swarm iteration budget");
    if (!(options.velocity_clamp > 0.0)) throw InputError("velocity clamp must be positive");

    const Eigen::VectorXd width = upper - lower;
    const Eigen::VectorXd vmax = options.velocity_clamp * width;
    const std::size_t n = options.swarm_size;
    std::mt19937_64 rng(options.seed);

    std::vector<Eigen::VectorXd> x(n, Eigen::VectorXd(dim)), v(n, Eigen::VectorXd(dim));
    for (std::size_t i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < dim; ++d) {
            x[i][d] = lower[d] + unit(rng) * width[d];
            v[i][d] = (2.0 * unit(rng) - 1.0) * 0.5 * vmax[d];
        }

    SwarmResult result;
    std::vector<double> values(n);
    auto is_divergent = [&](double g) { return !std::isfinite(g) || g >= options.divergence_sentinel; };
    int divergent_streak = 0;
    auto evaluate = [&](int iteration) {
        evaluate_all(objective, x, values, options.threads);
        result.evaluations += n;
        std::size_t bad = 0;
        for (auto& g : values)
            if (is_divergent(g)) {
                g = options.divergence_sentinel;
                ++bad;
            }
        divergent_streak = bad == n ? divergent_streak + 1 : 0;
        if (divergent_streak >= options.divergence_patience) {
            std::ostringstream msg;
            msg << "all " << n << " particles diverged for " << divergent_streak
                << " consecutive iterations (last iteration " << iteration << ")";
            throw IdentificationError(msg.str());
        }
    };

    evaluate(0);
    std::vector<Eigen::VectorXd> pbest = x;
    std::vector<double> pbest_value = values;
    std::size_t g = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (pbest_value[i] < pbest_value[g]) g = i;
    Eigen::VectorXd gbest = pbest[g];
    double gbest_value = pbest_value[g];
    result.history.push_back(gbest_value);

    for (int it = 1; it <= options.iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            for (Eigen::Index d = 0; d < dim; ++d) {
                const double r1 = unit(rng), r2 = unit(rng);
                double vel = options.inertia * v[i][d] +
                             options.cognitive * r1 * (pbest[i][d] - x[i][d]) +
                             options.social * r2 * (gbest[d] - x[i][d]);
                vel = std::clamp(vel, -vmax[d], vmax[d]);
                double pos = x[i][d] + vel;
                if (pos > upper[d]) {
                    pos = upper[d] - (pos - upper[d]);
                    vel = -vel;
                } else if (pos < lower[d]) {
                    pos = lower[d] + (lower[d] - pos);
                    vel = -vel;
                }
                x[i][d] = std::clamp(pos, lower[d], upper[d]);
                v[i][d] = vel;
            }
        }
        evaluate(it);
        for (std::size_t i = 0; i < n; ++i) {
            if (values[i] < pbest_value[i]) {
                pbest_value[i] = values[i];
                pbest[i] = x[i];
            }
            if (values[i] < gbest_value) {
                gbest_value = values[i];
                gbest = x[i];
            }
        }
        result.history.push_back(gbest_value);
        result.iterations = it;

        const auto k = result.history.size() - 1;
        if (options.stall_window > 0 && k >= static_cast<std::size_t>(options.stall_window)) {
            const double before = result.history[k - static_cast<std::size_t>(options.stall_window)];
            if (before - gbest_value <= options.stall_tolerance * std::abs(before)) {
                result.stalled = true;
                break;
            }
        }
    }
    result.best = gbest;
    result.best_value = gbest_value;
    return result;
}

} // namespace bhkle

#ifndef BHKLE_SWARM_HPP
#define BHKLE_SWARM_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace bhkle {

struct SwarmOptions {
    std::size_t swarm_size = 24;
    int iterations = 60;
    double inertia = 0.72;
    double cognitive = 1.49;
    double social = 1.49;
    double velocity_clamp = 0.5;   // fraction of the box width per component
    int stall_window = 10;         // iterations
    double stall_tolerance = 1e-10; // relative improvement over the window
    double divergence_sentinel = 1e6;
    int divergence_patience = 3;   // consecutive all-divergent iterations
    std::uint64_t seed = 1;
    int threads = 1;

    bool operator==(const SwarmOptions&) const = default;
};

struct SwarmResult {
    Eigen::VectorXd best;
    double best_value = 0.0;
    std::vector<double> history; // global best after initialisation and each iteration
    int iterations = 0;
    std::size_t evaluations = 0;
    bool stalled = false;
};

// Values that are non-finite or at least the sentinel count as divergent.
using SwarmObjective = std::function<double(const Eigen::VectorXd&)>;

// Global-best particle swarm over the box [lower, upper] with reflecting
// walls. Results depend only on the seed: particles are evaluated in
// parallel but all random draws and reductions run in particle order.
// Throws IdentificationError when every particle diverges for
// `divergence_patience` consecutive iterations.
SwarmResult minimize_swarm(const SwarmObjective& objective, const Eigen::VectorXd& lower,
                           const Eigen::VectorXd& upper, const SwarmOptions& options = {});

} // namespace bhkle

#endif // BHKLE_SWARM_HPP

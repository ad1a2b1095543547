#ifndef MEP_CORE_RNG_HPP
#define MEP_CORE_RNG_HPP

#include <cmath>
#include <cstdint>

namespace mep {

// Counter-based splittable generator. Streams derived from (seed, stream_id)
// are independent of iteration order, so replications can run in any order
// (or in parallel) and still produce bit-identical data. Samplers are written
// out explicitly so results do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream_id) {
        state_ = mix(seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1));
        state_ = mix(state_ ^ mix(stream_id + 0x517cc1b727220a95ULL));
        has_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform on (0,1), never exactly 0 or 1.
    double uniform() {
        const std::uint64_t u = next_u64() >> 11;  // 53 bits
        return (static_cast<double>(u) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; caches the second deviate.
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586477 * u2;
        cached_normal_ = r * std::sin(a);
        has_cached_normal_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Beta(2,2) is the median of three independent uniforms.
    double beta22() {
        double a = uniform(), b = uniform(), c = uniform();
        const double mx = std::max(a, std::max(b, c));
        const double mn = std::min(a, std::min(b, c));
        return a + b + c - mx - mn;
    }

    // Student t with 3 degrees of freedom.
    double t3() {
        const double z = normal();
        const double c1 = normal(), c2 = normal(), c3 = normal();
        const double chi2 = c1 * c1 + c2 * c2 + c3 * c3;
        return z / std::sqrt(chi2 / 3.0);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
    bool has_cached_normal_;
    double cached_normal_;
};

}  // namespace mep

#endif

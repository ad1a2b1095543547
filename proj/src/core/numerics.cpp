#include "core/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mep {

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

// Acklam's rational approximation refined by one Halley step; good to ~1e-15.
double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double plow = 0.02425;
    double q, x;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * 2.5066282746310002 * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

GaussHermite gauss_hermite(int n) {
    if (n < 1 || n > 128) throw std::invalid_argument("gauss_hermite: n must be in [1, 128]");
    GaussHermite gh;
    if (n == 1) {
        gh.nodes = VectorXd::Zero(1);
        gh.weights = VectorXd::Constant(1, std::sqrt(M_PI));
        return gh;
    }
    // Golub-Welsch: Jacobi matrix has zero diagonal, off-diagonal sqrt(k/2).
    MatrixXd J = MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double off = std::sqrt(k / 2.0);
        J(k, k - 1) = off;
        J(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
    gh.nodes = es.eigenvalues();
    gh.weights.resize(n);
    const double mu0 = std::sqrt(M_PI);
    for (int i = 0; i < n; ++i) {
        const double v = es.eigenvectors()(0, i);
        gh.weights(i) = mu0 * v * v;
    }
    return gh;
}

QuadratureGrid product_grid(double x, VecRef z, const ModelSpec& spec, VecRef beta, int n_w, int n_y) {
    const GaussHermite ghw = gauss_hermite(n_w);
    const GaussHermite ghy = gauss_hermite(n_y);
    const double sqrt2 = std::sqrt(2.0);
    QuadratureGrid g;
    g.w_nodes = (ghw.nodes.array() * sqrt2 * spec.sigma_u + x).matrix();
    g.w_weights = ghw.weights / std::sqrt(M_PI);
    const double mu_y = spec.mean.value(x, z, beta);
    g.y_nodes = (ghy.nodes.array() * sqrt2 * spec.sigma_eps + mu_y).matrix();
    g.y_weights = ghy.weights / std::sqrt(M_PI);
    return g;
}

double kde_at(double point, VecRef sample, double bandwidth) {
    if (sample.size() == 0) throw std::invalid_argument("kde_at: empty sample");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_at: bandwidth must be positive");
    const double inv_h = 1.0 / bandwidth;
    double s = 0.0;
    for (Eigen::Index i = 0; i < sample.size(); ++i) {
        const double t = (point - sample(i)) * inv_h;
        s += std::exp(-0.5 * t * t);
    }
    return s * 0.3989422804014326779 * inv_h / static_cast<double>(sample.size());
}

double silverman_bandwidth(VecRef sample) {
    const Eigen::Index n = sample.size();
    if (n == 0) throw std::invalid_argument("silverman_bandwidth: empty sample");
    if (n == 1) return 1.0;
    const double mean = sample.mean();
    const double sd = std::sqrt((sample.array() - mean).square().sum() / static_cast<double>(n - 1));
    const double h = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
    return std::max(h, 1e-9 * (1.0 + std::abs(mean)));
}

NwSettings nw_settings_for(const Dataset& data) {
    const int d = 1 + (data.zdim() - 1);
    NwSettings s;
    s.bandwidths.resize(d);
    s.discrete.assign(d, false);
    auto column = [&](int c) -> VectorXd {
        if (c == 0) return data.ws();
        return data.zs().col(c);  // c >= 1 maps to z column c (intercept skipped)
    };
    // a coordinate with few distinct values is matched exactly
    int d_cont = 0;
    for (int c = 0; c < d; ++c) {
        const VectorXd col = column(c);
        std::vector<double> vals(col.data(), col.data() + col.size());
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        if (vals.size() <= 10) s.discrete[c] = true;
        else ++d_cont;
    }
    // multivariate Silverman: h_j = sd_j (4/(d+2))^{1/(d+4)} n^{-1/(d+4)}
    const double expo = 1.0 / (d_cont + 4.0);
    const double factor = std::pow(4.0 / (d_cont + 2.0), expo) * std::pow(data.n(), -expo);
    for (int c = 0; c < d; ++c) {
        if (s.discrete[c]) {
            s.bandwidths(c) = 1.0;
            continue;
        }
        const VectorXd col = column(c);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() /
                                    std::max(1, static_cast<int>(col.size()) - 1));
        s.bandwidths(c) = std::max(factor * sd, 1e-9 * (1.0 + std::abs(mean)));
    }
    return s;
}

namespace {
double log_kernel_weight(double qw, VecRef qz, double dw, VecRef dz, const NwSettings& s) {
    double lw = 0.0;
    const int d = static_cast<int>(s.bandwidths.size());
    for (int c = 0; c < d; ++c) {
        const double a = (c == 0) ? qw : qz(c);
        const double b = (c == 0) ? dw : dz(c);
        if (s.discrete[c]) {
            if (a != b) return -std::numeric_limits<double>::infinity();
        } else {
            const double t = (a - b) / s.bandwidths(c);
            lw -= 0.5 * t * t;
        }
    }
    return lw;
}
}  // namespace

NwResult nadaraya_watson(double query_w, VecRef query_z, const Dataset& data, VecRef targets,
                         const NwSettings& settings) {
    if (data.n() == 0) throw std::invalid_argument("nadaraya_watson: empty data");
    if (targets.size() != data.n()) throw std::invalid_argument("nadaraya_watson: targets misaligned");
    double num = 0.0, den = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        const double lw = log_kernel_weight(query_w, query_z, data.w(i), data.z(i), settings);
        if (lw == -std::numeric_limits<double>::infinity()) continue;
        const double wgt = std::exp(lw);
        num += wgt * targets(i);
        den += wgt;
    }
    if (den < 1e-12) return NwResult{targets.mean(), true};
    return NwResult{num / den, false};
}

MatrixXd nw_weight_matrix(const Dataset& query, const Dataset& data, const NwSettings& settings,
                          bool leave_one_out) {
    MatrixXd W(query.n(), data.n());
    for (int i = 0; i < query.n(); ++i) {
        const VectorXd qz = query.z(i);
        double den = 0.0;
        for (int j = 0; j < data.n(); ++j) {
            if (leave_one_out && i == j) {
                W(i, j) = 0.0;
                continue;
            }
            const double lw = log_kernel_weight(query.w(i), qz, data.w(j), data.z(j), settings);
            W(i, j) = std::isfinite(lw) ? std::exp(lw) : 0.0;
            den += W(i, j);
        }
        if (den < 1e-12) {
            // no usable neighbor: fall back to the global (leave-one-out) mean
            const double fill = 1.0 / (leave_one_out ? std::max(1, data.n() - 1) : data.n());
            for (int j = 0; j < data.n(); ++j) W(i, j) = (leave_one_out && i == j) ? 0.0 : fill;
        } else {
            W.row(i) /= den;
        }
    }
    return W;
}

KMeans2Result kmeans2(const std::vector<VectorXd>& points, int max_iter, std::uint64_t seed) {
    (void)seed;  // farthest-pair initialization is already deterministic
    const int n = static_cast<int>(points.size());
    if (n < 1) throw std::invalid_argument("kmeans2: no points");
    KMeans2Result res;
    res.assignment = VectorXi::Zero(n);

    bool all_same = true;
    for (int i = 1; i < n && all_same; ++i)
        if ((points[i] - points[0]).squaredNorm() > 0.0) all_same = false;
    if (all_same || n < 2) {
        res.centroids = {points[0]};
        res.degenerate = true;
        res.sse = 0.0;
        return res;
    }

    int ia = 0, ib = 1;
    double best = -1.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = (points[i] - points[j]).squaredNorm();
            if (d > best) {
                best = d;
                ia = i;
                ib = j;
            }
        }
    std::vector<VectorXd> cent = {points[ia], points[ib]};

    double prev_sse = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        double sse = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d0 = (points[i] - cent[0]).squaredNorm();
            const double d1 = (points[i] - cent[1]).squaredNorm();
            res.assignment(i) = d1 < d0 ? 1 : 0;
            sse += std::min(d0, d1);
        }
        std::vector<VectorXd> sum(2, VectorXd::Zero(points[0].size()));
        int cnt[2] = {0, 0};
        for (int i = 0; i < n; ++i) {
            sum[res.assignment(i)] += points[i];
            ++cnt[res.assignment(i)];
        }
        for (int g = 0; g < 2; ++g)
            if (cnt[g] > 0) cent[g] = sum[g] / cnt[g];
        res.sse = sse;
        if (sse >= prev_sse - 1e-14) break;
        prev_sse = sse;
    }
    res.centroids = cent;
    return res;
}

ZGroups zgroups_from_kmeans(const Dataset& data, int max_iter, std::uint64_t seed) {
    std::vector<VectorXd> pts;
    pts.reserve(data.n());
    for (int i = 0; i < data.n(); ++i) pts.push_back(data.z(i));
    const KMeans2Result km = kmeans2(pts, max_iter, seed);
    ZGroups g;
    g.assignment = km.assignment;
    g.centroids = km.centroids;
    g.degenerate = km.degenerate;
    return g;
}

double empirical_quantile(VecRef sample, double q) {
    if (sample.size() == 0) throw std::invalid_argument("empirical_quantile: empty sample");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("empirical_quantile: q outside (0,1)");
    std::vector<double> v(sample.data(), sample.data() + sample.size());
    std::sort(v.begin(), v.end());
    const int n = static_cast<int>(v.size());
    const int k = static_cast<int>(std::ceil(q * n));
    return v[std::min(std::max(k, 1), n) - 1];
}

BisectResult bisect_root(const std::function<double(double)>& f, double lo, double hi, double tol,
                         int max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("bisect_root: tol must be positive");
    if (lo > hi) std::swap(lo, hi);
    double flo = f(lo), fhi = f(hi);
    if (flo == 0.0) return {lo, 0, lo, lo};
    if (fhi == 0.0) return {hi, 0, hi, hi};
    if (flo * fhi > 0.0) {
        // scan a 64-point grid for a bracket
        const int kScan = 64;
        double prev_x = lo, prev_f = flo;
        bool found = false;
        std::ostringstream scanned;
        for (int k = 1; k <= kScan; ++k) {
            const double x = lo + (hi - lo) * k / kScan;
            const double fx = f(x);
            scanned << " f(" << x << ")=" << fx;
            if (prev_f * fx <= 0.0) {
                lo = prev_x;
                hi = x;
                flo = prev_f;
                fhi = fx;
                found = true;
                break;
            }
            prev_x = x;
            prev_f = fx;
        }
        if (!found)
            throw std::runtime_error("bisect_root: no sign change after grid scan;" + scanned.str());
    }
    BisectResult res;
    res.lo = lo;
    res.hi = hi;
    int it = 0;
    while (hi - lo > tol && it < max_iter) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) {
            lo = hi = mid;
            break;
        }
        if (flo * fm < 0.0) {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
        ++it;
    }
    res.root = 0.5 * (lo + hi);
    res.iterations = it;
    return res;
}

}  // namespace mep

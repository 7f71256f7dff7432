#include "fetalseg/embed.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <fstream>
#include <limits>
#include <set>

#include "fetalseg/common.hpp"
#include "fetalseg/svg.hpp"

namespace fetalseg {

std::vector<float> embedding_features(const ImageF& image) {
    const ImageF small = resize_bilinear(image, 40, 72);
    return small.px;
}

namespace {

double euclidean(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

KnnGraph knn_graph(const std::vector<std::vector<float>>& features, int k) {
    const int n = static_cast<int>(features.size());
    if (k < 1) throw std::invalid_argument("knn_graph: k must be >= 1");
    if (k >= n) throw std::invalid_argument("knn_graph: need at least k+1 points, got " + std::to_string(n));
    KnnGraph g;
    g.k = k;
    g.neighbors.resize(static_cast<size_t>(n));
    g.distances.resize(static_cast<size_t>(n));
    g.weights.resize(static_cast<size_t>(n));
    g.rho.resize(static_cast<size_t>(n));
    g.sigma.resize(static_cast<size_t>(n));

    const double target = std::log2(static_cast<double>(k));
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < n; ++i) {
        dist.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            dist.emplace_back(euclidean(features[static_cast<size_t>(i)], features[static_cast<size_t>(j)]), j);
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        auto& nb = g.neighbors[static_cast<size_t>(i)];
        auto& dd = g.distances[static_cast<size_t>(i)];
        for (int m = 0; m < k; ++m) {
            nb.push_back(dist[static_cast<size_t>(m)].second);
            dd.push_back(dist[static_cast<size_t>(m)].first);
        }
        const double rho = dd[0];
        // sum_j exp(-(d-rho)/sigma) is increasing in sigma; bisect with a
        // doubling upper phase folded into 64 fixed steps
        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
        for (int it = 0; it < 64; ++it) {
            double sum = 0.0;
            for (double d : dd) sum += std::exp(-std::max(0.0, d - rho) / mid);
            if (sum > target) {
                hi = mid;
                mid = 0.5 * (lo + hi);
            } else {
                lo = mid;
                mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
            }
        }
        g.rho[static_cast<size_t>(i)] = rho;
        g.sigma[static_cast<size_t>(i)] = mid;
        auto& ww = g.weights[static_cast<size_t>(i)];
        for (double d : dd) ww.push_back(std::exp(-std::max(0.0, d - rho) / std::max(mid, 1e-12)));
    }
    return g;
}

FuzzyGraph fuzzy_union(const KnnGraph& graph) {
    std::map<std::pair<int, int>, double> acc;  // (i<j) ->, start from directed weights
    const int n = graph.size();
    for (int i = 0; i < n; ++i)
        for (size_t m = 0; m < graph.neighbors[static_cast<size_t>(i)].size(); ++m) {
            const int j = graph.neighbors[static_cast<size_t>(i)][m];
            const double w = graph.weights[static_cast<size_t>(i)][m];
            const auto key = std::minmax(i, j);
            auto [it, fresh] = acc.emplace(std::pair<int, int>(key.first, key.second), w);
            if (!fresh) it->second = it->second + w - it->second * w;
        }
    FuzzyGraph out;
    out.n = n;
    out.edges.reserve(acc.size());
    for (const auto& [key, w] : acc) out.edges.push_back({key.first, key.second, w});
    return out;
}

std::pair<double, double> fit_curve_ab(double min_dist) {
    // target: 1 for d <= min_dist, exp(-(d - min_dist)) beyond; fit over (0,3]
    const int npts = 300;
    std::vector<double> xs(npts), ys(npts);
    for (int i = 0; i < npts; ++i) {
        const double d = 3.0 * (i + 1) / npts;
        xs[static_cast<size_t>(i)] = d;
        ys[static_cast<size_t>(i)] = d <= min_dist ? 1.0 : std::exp(-(d - min_dist));
    }
    double a = 1.0, b = 1.0;
    double lambda = 1e-3;
    auto sse = [&](double pa, double pb) {
        double s = 0.0;
        for (int i = 0; i < npts; ++i) {
            const double f = 1.0 / (1.0 + pa * std::pow(xs[static_cast<size_t>(i)], 2.0 * pb));
            const double r = f - ys[static_cast<size_t>(i)];
            s += r * r;
        }
        return s;
    };
    double err = sse(a, b);
    for (int iter = 0; iter < 200; ++iter) {
        double jtj[2][2] = {{0, 0}, {0, 0}};
        double jtr[2] = {0, 0};
        for (int i = 0; i < npts; ++i) {
            const double d = xs[static_cast<size_t>(i)];
            const double p = std::pow(d, 2.0 * b);
            const double denom = 1.0 + a * p;
            const double f = 1.0 / denom;
            const double r = f - ys[static_cast<size_t>(i)];
            const double dfda = -p / (denom * denom);
            const double dfdb = -2.0 * a * p * std::log(d) / (denom * denom);
            jtj[0][0] += dfda * dfda;
            jtj[0][1] += dfda * dfdb;
            jtj[1][1] += dfdb * dfdb;
            jtr[0] += dfda * r;
            jtr[1] += dfdb * r;
        }
        jtj[1][0] = jtj[0][1];
        const double d00 = jtj[0][0] * (1.0 + lambda), d11 = jtj[1][1] * (1.0 + lambda);
        const double det = d00 * d11 - jtj[0][1] * jtj[1][0];
        if (std::abs(det) < 1e-18) break;
        const double da = -(d11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        const double db = -(-jtj[1][0] * jtr[0] + d00 * jtr[1]) / det;
        const double na = std::max(1e-6, a + da), nb = std::max(1e-6, b + db);
        const double nerr = sse(na, nb);
        if (nerr < err) {
            a = na;
            b = nb;
            err = nerr;
            lambda = std::max(lambda * 0.5, 1e-9);
            if (std::abs(da) < 1e-12 && std::abs(db) < 1e-12) break;
        } else {
            lambda *= 4.0;
            if (lambda > 1e12) break;
        }
    }
    return {a, b};
}

namespace {

constexpr int kSpectralLimit = 1200;

// Bottom eigenvectors (2nd and 3rd) of the normalized Laplacian via cyclic
// Jacobi on the dense matrix.
bool spectral_coords(const FuzzyGraph& graph, std::vector<Point2D>* coords) {
    const int n = graph.n;
    if (n < 3 || n > kSpectralLimit) return false;
    std::vector<double> degree(static_cast<size_t>(n), 0.0);
    for (const auto& e : graph.edges) {
        degree[static_cast<size_t>(e.i)] += e.w;
        degree[static_cast<size_t>(e.j)] += e.w;
    }
    for (double d : degree)
        if (d <= 0.0) return false;

    std::vector<double> a(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) a[static_cast<size_t>(i) * n + i] = 1.0;
    for (const auto& e : graph.edges) {
        const double v = -e.w / std::sqrt(degree[static_cast<size_t>(e.i)] * degree[static_cast<size_t>(e.j)]);
        a[static_cast<size_t>(e.i) * n + e.j] = v;
        a[static_cast<size_t>(e.j) * n + e.i] = v;
    }
    std::vector<double> vec(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) vec[static_cast<size_t>(i) * n + i] = 1.0;

    const int sweeps = 30;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-18) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-15) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[static_cast<size_t>(i) * n + p];
                    const double aiq = a[static_cast<size_t>(i) * n + q];
                    a[static_cast<size_t>(i) * n + p] = c * aip - s * aiq;
                    a[static_cast<size_t>(i) * n + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[static_cast<size_t>(p) * n + i];
                    const double aqi = a[static_cast<size_t>(q) * n + i];
                    a[static_cast<size_t>(p) * n + i] = c * api - s * aqi;
                    a[static_cast<size_t>(q) * n + i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = vec[static_cast<size_t>(i) * n + p];
                    const double viq = vec[static_cast<size_t>(i) * n + q];
                    vec[static_cast<size_t>(i) * n + p] = c * vip - s * viq;
                    vec[static_cast<size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
    }
    std::vector<std::pair<double, int>> evals(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) evals[static_cast<size_t>(i)] = {a[static_cast<size_t>(i) * n + i], i};
    std::sort(evals.begin(), evals.end());
    const int c1 = evals[1].second, c2 = evals[2].second;
    coords->resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        (*coords)[static_cast<size_t>(i)].x = vec[static_cast<size_t>(i) * n + c1];
        (*coords)[static_cast<size_t>(i)].y = vec[static_cast<size_t>(i) * n + c2];
    }
    return true;
}

double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

std::vector<Point2D> layout_2d(const FuzzyGraph& graph, const EmbeddingConfig& config) {
    config.validate();
    const int n = graph.n;
    if (n == 0) return {};
    if (n == 1) return {Point2D{0.0, 0.0}};

    Rng rng(mix64(config.seed, 0x6c61796f7574ULL));
    std::vector<Point2D> pts;
    if (spectral_coords(graph, &pts)) {
        double maxabs = 1e-12;
        for (const auto& p : pts) maxabs = std::max({maxabs, std::abs(p.x), std::abs(p.y)});
        for (auto& p : pts) {
            p.x = p.x / maxabs * 10.0 + rng.normal(0.0, 1e-4);
            p.y = p.y / maxabs * 10.0 + rng.normal(0.0, 1e-4);
        }
    } else {
        pts.resize(static_cast<size_t>(n));
        for (auto& p : pts) {
            p.x = rng.uniform(-10.0, 10.0);
            p.y = rng.uniform(-10.0, 10.0);
        }
    }

    const auto [a, b] = fit_curve_ab(config.min_dist);
    const size_t ne = graph.edges.size();
    if (ne == 0) return pts;
    double max_w = 0.0;
    for (const auto& e : graph.edges) max_w = std::max(max_w, e.w);
    std::vector<double> epochs_per_sample(ne), next_sample(ne), next_neg(ne), epochs_per_neg(ne);
    for (size_t l = 0; l < ne; ++l) {
        epochs_per_sample[l] = max_w / std::max(graph.edges[l].w, 1e-12);
        next_sample[l] = epochs_per_sample[l];
        epochs_per_neg[l] = epochs_per_sample[l] / config.negative_sample_rate;
        next_neg[l] = epochs_per_neg[l];
    }

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double alpha = 1.0 - static_cast<double>(epoch) / config.epochs;
        for (size_t l = 0; l < ne; ++l) {
            if (next_sample[l] > static_cast<double>(epoch)) continue;
            const int i = graph.edges[l].i, j = graph.edges[l].j;
            Point2D& pi = pts[static_cast<size_t>(i)];
            Point2D& pj = pts[static_cast<size_t>(j)];
            const double dx = pi.x - pj.x, dy = pi.y - pj.y;
            const double d2 = dx * dx + dy * dy;
            if (d2 > 0.0) {
                const double pd2b = std::pow(d2, b);
                const double coeff = (-2.0 * a * b * pd2b) / (d2 * (a * pd2b + 1.0));
                const double gx = clip4(coeff * dx) * alpha, gy = clip4(coeff * dy) * alpha;
                pi.x += gx;
                pi.y += gy;
                pj.x -= gx;
                pj.y -= gy;
            }
            next_sample[l] += epochs_per_sample[l];

            const int n_neg = static_cast<int>((static_cast<double>(epoch) - next_neg[l]) / epochs_per_neg[l]);
            for (int p = 0; p < n_neg; ++p) {
                const int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                if (other == i) continue;
                Point2D& po = pts[static_cast<size_t>(other)];
                const double rx = pi.x - po.x, ry = pi.y - po.y;
                const double r2 = rx * rx + ry * ry;
                const double pd2b = std::pow(r2, b);
                const double coeff = (2.0 * b) / ((0.001 + r2) * (a * pd2b + 1.0));
                double gx, gy;
                if (coeff > 0.0) {
                    gx = clip4(coeff * rx);
                    gy = clip4(coeff * ry);
                } else {
                    gx = 4.0;
                    gy = 4.0;
                }
                pi.x += gx * alpha;
                pi.y += gy * alpha;
            }
            next_neg[l] += n_neg * epochs_per_neg[l];
        }
    }
    for (const auto& p : pts)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw NumericError("layout_2d: non-finite coordinate");
    return pts;
}

ClusterReport cluster_metrics(const std::vector<Point2D>& points, const std::vector<std::string>& labels) {
    if (points.size() != labels.size()) throw std::invalid_argument("cluster_metrics: size mismatch");
    const int n = static_cast<int>(points.size());
    if (points.empty()) throw std::invalid_argument("cluster_metrics: no points");
    std::map<std::string, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[labels[static_cast<size_t>(i)]].push_back(i);

    ClusterReport rep;
    std::set<std::string> included;
    for (const auto& [label, members] : groups) {
        if (members.size() < 2)
            rep.excluded_labels.push_back(label);
        else
            included.insert(label);
    }
    rep.silhouette = std::numeric_limits<double>::quiet_NaN();

    auto dist = [&points](int i, int j) {
        const double dx = points[static_cast<size_t>(i)].x - points[static_cast<size_t>(j)].x;
        const double dy = points[static_cast<size_t>(i)].y - points[static_cast<size_t>(j)].y;
        return std::sqrt(dx * dx + dy * dy);
    };

    double sil_sum = 0.0;
    int sil_count = 0;
    for (int i = 0; included.size() >= 2 && i < n; ++i) {
        const auto& own = labels[static_cast<size_t>(i)];
        if (!included.count(own)) continue;
        double a = 0.0;
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, members] : groups) {
            if (!included.count(label) && label != own) continue;
            double sum = 0.0;
            int cnt = 0;
            for (int j : members) {
                if (j == i) continue;
                sum += dist(i, j);
                ++cnt;
            }
            if (cnt == 0) continue;
            const double mean = sum / cnt;
            if (label == own)
                a = mean;
            else
                b = std::min(b, mean);
        }
        sil_sum += (b - a) / std::max(a, b);
        ++sil_count;
    }
    if (sil_count > 0) rep.silhouette = sil_sum / sil_count;

    const int kq = std::min(10, n - 1);
    double purity_sum = 0.0;
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) order.emplace_back(dist(i, j), j);
        std::partial_sort(order.begin(), order.begin() + kq, order.end());
        int same = 0;
        for (int m = 0; m < kq; ++m)
            if (labels[static_cast<size_t>(order[static_cast<size_t>(m)].second)] == labels[static_cast<size_t>(i)])
                ++same;
        purity_sum += static_cast<double>(same) / kq;
    }
    rep.knn_purity = n > 0 ? purity_sum / n : 0.0;
    return rep;
}

double trustworthiness(const std::vector<std::vector<float>>& features, const std::vector<Point2D>& coords, int k) {
    const int n = static_cast<int>(features.size());
    if (n != static_cast<int>(coords.size())) throw std::invalid_argument("trustworthiness: size mismatch");
    if (2 * n <= 3 * k + 1) throw std::invalid_argument("trustworthiness: too few points for k");

    // ranks in the original space
    std::vector<std::vector<int>> rank(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), 0));
    std::vector<std::vector<int>> orig_knn(static_cast<size_t>(n));
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) order.emplace_back(euclidean(features[static_cast<size_t>(i)], features[static_cast<size_t>(j)]), j);
        std::sort(order.begin(), order.end());
        for (int r = 0; r < static_cast<int>(order.size()); ++r)
            rank[static_cast<size_t>(i)][static_cast<size_t>(order[static_cast<size_t>(r)].second)] = r + 1;
        for (int r = 0; r < k; ++r) orig_knn[static_cast<size_t>(i)].push_back(order[static_cast<size_t>(r)].second);
    }

    double penalty = 0.0;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = coords[static_cast<size_t>(i)].x - coords[static_cast<size_t>(j)].x;
            const double dy = coords[static_cast<size_t>(i)].y - coords[static_cast<size_t>(j)].y;
            order.emplace_back(dx * dx + dy * dy, j);
        }
        std::partial_sort(order.begin(), order.begin() + k, order.end());
        const auto& ok = orig_knn[static_cast<size_t>(i)];
        for (int m = 0; m < k; ++m) {
            const int j = order[static_cast<size_t>(m)].second;
            if (std::find(ok.begin(), ok.end(), j) == ok.end())
                penalty += rank[static_cast<size_t>(i)][static_cast<size_t>(j)] - k;
        }
    }
    return 1.0 - 2.0 / (static_cast<double>(n) * k * (2.0 * n - 3.0 * k - 1.0)) * penalty;
}

void export_plot(const std::vector<EmbeddingPoint>& points, const std::string& svg_path, const std::string& csv_path) {
    std::vector<std::string> devices;
    for (const auto& p : points)
        if (std::find(devices.begin(), devices.end(), p.device) == devices.end()) devices.push_back(p.device);
    std::sort(devices.begin(), devices.end());
    svg::write_embedding_scatter(points, devices, svg_path);

    std::ofstream csv(csv_path);
    if (!csv) throw LoadError("export_plot: cannot open for write: " + csv_path);
    csv << "x,y,device,plane,sample_id\n";
    char buf[64];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", p.x, p.y);
        csv << buf << p.device << ',' << plane_name(p.plane) << ',' << p.sample_id << '\n';
    }
}

}  // namespace fetalseg

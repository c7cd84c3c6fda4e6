#pragma once

// Supervised maps between embedding spaces over parallel anchor rows:
// closed-form ridge least squares (with a stochastic solver kept for
// comparison), the orthogonal Procrustes solution, and a distance-weighted
// k-nearest-neighbour transform. Plus the flat `emb v1` matrix file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "relex/common.hpp"
#include "relex/matrix.hpp"

namespace relex {

struct AnchorSet {
    Mat<double> source;  // N x d_src
    Mat<double> target;  // N x d_tgt, row i is the same token as source row i

    int count() const { return source.rows; }
    void validate() const {
        if (source.rows != target.rows) throw ShapeError("anchor set: source/target row counts disagree");
        if (source.rows < 1) throw Error("anchor set: no anchors");
    }
    // Advisory only; fitting proceeds regardless.
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (source.rows < source.cols)
            w.push_back("anchor count " + std::to_string(source.rows) + " is below source dimension " +
                        std::to_string(source.cols) + "; the fit is underdetermined");
        return w;
    }
};

enum class MapMethod { lstsq, procrustes };

inline const char* map_method_name(MapMethod m) {
    return m == MapMethod::lstsq ? "lstsq" : "procrustes";
}
inline MapMethod map_method_from_name(const std::string& s) {
    if (s == "lstsq") return MapMethod::lstsq;
    if (s == "procrustes") return MapMethod::procrustes;
    throw Error("unknown map method: " + s);
}

struct LinearMap {
    Mat<double> w;  // d_src x d_tgt
    MapMethod method = MapMethod::lstsq;
    double residual = 0;  // mean squared Euclidean distance over the anchors
};

template <class Real>
Mat<Real> apply_map_matrix(const Mat<Real>& w, const Mat<Real>& embeddings) {
    if (embeddings.cols != w.rows) throw ShapeError("apply_map: embedding width does not match map");
    return matmul(embeddings, w);
}

inline Mat<double> apply_map(const LinearMap& map, const Mat<double>& embeddings) {
    return apply_map_matrix(map.w, embeddings);
}

inline double mean_squared_residual(const Mat<double>& w, const AnchorSet& anchors) {
    Mat<double> mapped = apply_map_matrix(w, anchors.source);
    double total = 0;
    for (int i = 0; i < mapped.rows; ++i) {
        for (int j = 0; j < mapped.cols; ++j) {
            const double d = mapped.at(i, j) - anchors.target.at(i, j);
            total += d * d;
        }
    }
    return total / static_cast<double>(anchors.count());
}

namespace detail {

// k nearest rows by cosine distance, ascending, ties broken by lower index.
inline std::vector<std::pair<double, int>> nearest_anchors(const double* e, const Mat<double>& rows, int k) {
    std::vector<std::pair<double, int>> dist(rows.rows);
    for (int a = 0; a < rows.rows; ++a) dist[a] = {cosine_distance(e, rows.row(a), rows.cols), a};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    dist.resize(k);
    return dist;
}

inline Mat<double> normalized_rows(const Mat<double>& m) {
    Mat<double> out = m;
    for (int i = 0; i < m.rows; ++i) {
        const double n = row_norm(m, i);
        if (n == 0) throw NumericError("cannot unit-normalize a zero embedding row");
        for (int j = 0; j < m.cols; ++j) out.at(i, j) /= n;
    }
    return out;
}

}  // namespace detail

// Minimizes mean ||x_i W - y_i||^2 + lambda ||W||^2 in closed form through
// the normal equations; lambda = ridge * trace(X'X/N) / d_src, so `ridge`
// is scale-free. ridge 0 is exact least squares.
inline LinearMap fit_lstsq(const AnchorSet& anchors, double ridge = 1e-6) {
    anchors.validate();
    if (ridge < 0) throw Error("fit_lstsq: ridge must be non-negative");
    const int n = anchors.count();
    const int d_src = anchors.source.cols;
    Mat<double> xt = transpose(anchors.source);
    Mat<double> sxx = matmul(xt, anchors.source);  // d_src x d_src
    Mat<double> sxy = matmul(xt, anchors.target);  // d_src x d_tgt
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : sxx.v) v *= scale;
    for (auto& v : sxy.v) v *= scale;
    double tr = 0;
    for (int i = 0; i < d_src; ++i) tr += sxx.at(i, i);
    const double lambda = ridge * tr / static_cast<double>(d_src);
    for (int i = 0; i < d_src; ++i) sxx.at(i, i) += lambda;

    LinearMap map;
    map.method = MapMethod::lstsq;
    try {
        map.w = cholesky_solve(sxx, sxy);
    } catch (const NumericError&) {
        throw NumericError("fit_lstsq: normal equations are singular; retry with ridge > 0");
    }
    map.residual = mean_squared_residual(map.w, anchors);
    return map;
}

// Mini-batch stochastic solver for the same objective. Kept as a check that
// iterative fitting lands on the closed form; the step size is set from a
// power-iteration estimate of the curvature, so no tuning knob is exposed.
inline LinearMap fit_lstsq_sgd(const AnchorSet& anchors, double ridge, int epochs, std::uint64_t seed) {
    anchors.validate();
    if (epochs < 1) throw Error("fit_lstsq_sgd: epochs must be positive");
    const int n = anchors.count();
    const int d_src = anchors.source.cols;
    const int d_tgt = anchors.target.cols;

    Mat<double> xt = transpose(anchors.source);
    Mat<double> sxx = matmul(xt, anchors.source);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : sxx.v) v *= scale;
    double tr = 0;
    for (int i = 0; i < d_src; ++i) tr += sxx.at(i, i);
    const double lambda = ridge * tr / static_cast<double>(d_src);

    // largest eigenvalue of (Sxx + lambda I) bounds the curvature
    std::vector<double> pv(d_src, 1.0), pw(d_src);
    double eig = 1.0;
    for (int it = 0; it < 64; ++it) {
        for (int i = 0; i < d_src; ++i) pw[i] = dot(sxx.row(i), pv.data(), d_src) + lambda * pv[i];
        eig = std::sqrt(dot(pw.data(), pw.data(), d_src));
        if (eig == 0) break;
        for (int i = 0; i < d_src; ++i) pv[i] = pw[i] / eig;
    }
    const double lr = eig > 0 ? 0.45 / eig : 0.1;

    Mat<double> w(d_src, d_tgt);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    const int batch = std::min(n, 32);
    std::vector<double> err(d_tgt);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (int at = 0; at < n; at += batch) {
            const int m = std::min(batch, n - at);
            Mat<double> grad(d_src, d_tgt);
            for (int e = 0; e < m; ++e) {
                const double* x = anchors.source.row(order[at + e]);
                const double* y = anchors.target.row(order[at + e]);
                // err = x W - y; grad += 2 x' err / m
                for (int j = 0; j < d_tgt; ++j) err[j] = -y[j];
                for (int i = 0; i < d_src; ++i) axpy(x[i], w.row(i), err.data(), d_tgt);
                for (int i = 0; i < d_src; ++i) axpy(2.0 * x[i] / m, err.data(), grad.row(i), d_tgt);
            }
            for (std::size_t i = 0; i < w.v.size(); ++i)
                w.v[i] -= lr * (grad.v[i] + 2.0 * lambda * w.v[i]);
        }
    }
    LinearMap map;
    map.method = MapMethod::lstsq;
    map.w = std::move(w);
    map.residual = mean_squared_residual(map.w, anchors);
    return map;
}

// Orthogonal Procrustes: W = U V' from the thin SVD of source' * target.
// W has orthonormal rows, so the map only rotates/reflects — no scaling.
inline LinearMap fit_procrustes(const AnchorSet& anchors, bool unit_normalize = false) {
    anchors.validate();
    const int d_src = anchors.source.cols;
    const int d_tgt = anchors.target.cols;
    if (d_src > d_tgt)
        throw Error("fit_procrustes: source dimension exceeds target; no row-orthonormal map exists (swap the roles)");
    if (anchors.count() < d_src)
        throw Error("fit_procrustes: need at least as many anchors as source dimensions");
    const Mat<double> x = unit_normalize ? detail::normalized_rows(anchors.source) : anchors.source;
    const Mat<double> y = unit_normalize ? detail::normalized_rows(anchors.target) : anchors.target;

    Mat<double> m = matmul(transpose(x), y);  // d_src x d_tgt, wide or square
    // jacobi_svd wants rows >= cols; decompose m' = U S V', then W = V U'.
    Svd svd = jacobi_svd(transpose(m));
    Mat<double> w = matmul(transpose(svd.vt), transpose(svd.u));

    LinearMap map;
    map.method = MapMethod::procrustes;
    map.w = std::move(w);
    map.residual = mean_squared_residual(map.w, anchors);
    return map;
}

// ---------------------------------------------------------------------------
// Distance-weighted k-nearest-neighbour transform.

// Inverse-distance weights for a sorted neighbour-distance list.
inline std::vector<double> knn_weights(const std::vector<double>& distances) {
    std::vector<double> w(distances.size());
    double total = 0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        w[i] = 1.0 / (distances[i] + 1e-8);
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

// For each row of new_embeddings: pick the k anchors nearest in cosine
// distance (ties broken by lower anchor index) and blend their target rows
// with normalized inverse-distance weights.
inline Mat<double> knn_transform(const Mat<double>& new_embeddings, const AnchorSet& anchors, int k) {
    anchors.validate();
    if (k < 1 || k > anchors.count()) throw Error("knn_transform: k must be in [1, anchor count]");
    if (new_embeddings.cols != anchors.source.cols)
        throw ShapeError("knn_transform: embedding width does not match anchors");
    Mat<double> out(new_embeddings.rows, anchors.target.cols);
    for (int r = 0; r < new_embeddings.rows; ++r) {
        const auto dist = detail::nearest_anchors(new_embeddings.row(r), anchors.source, k);
        if (k == 1) {
            // exact copy, no arithmetic on the weights
            const double* t = anchors.target.row(dist[0].second);
            std::copy(t, t + out.cols, out.row(r));
            continue;
        }
        std::vector<double> d(k);
        for (int i = 0; i < k; ++i) d[i] = dist[i].first;
        const std::vector<double> w = knn_weights(d);
        double* o = out.row(r);
        for (int i = 0; i < k; ++i) axpy(w[i], anchors.target.row(dist[i].second), o, out.cols);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Flat matrix files: `emb v1 <rows> <cols>`, optional `method <tag>` line
// for fitted maps, then 32-bit little-endian row-major values.

template <class Real>
void save_embedding(const Mat<Real>& m, const std::string& path, const std::string& method_tag = "") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open embedding file for writing: " + path);
    os << "emb v1 " << m.rows << " " << m.cols << "\n";
    if (!method_tag.empty()) os << "method " << method_tag << "\n";
    for (Real x : m.v) write_f32(os, static_cast<float>(x));
    if (!os) throw Error("embedding write failed: " + path);
}

template <class Real>
Mat<Real> load_embedding(const std::string& path, std::string* method_tag = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open embedding file: " + path);
    std::string header;
    if (!std::getline(is, header)) throw FormatError("empty embedding file: " + path);
    std::istringstream hs(header);
    std::string word, version;
    int rows = -1, cols = -1;
    if (!(hs >> word >> version >> rows >> cols) || word != "emb")
        throw FormatError("bad embedding header: " + header);
    if (version != "v1") throw VersionError("unsupported embedding version: " + version);
    if (rows < 1 || cols < 1) throw FormatError("bad embedding shape in header: " + header);
    if (method_tag) method_tag->clear();

    // a `method <tag>` text line may sit between header and payload
    static const char kTag[] = "method ";
    char probe[7];
    const std::streampos payload = is.tellg();
    is.read(probe, 7);
    if (is && std::equal(probe, probe + 7, kTag)) {
        std::string tag;
        if (!std::getline(is, tag)) throw FormatError("truncated embedding method line: " + path);
        if (method_tag) *method_tag = tag;
    } else {
        is.clear();
        is.seekg(payload);
    }
    Mat<Real> m(rows, cols);
    for (auto& x : m.v) x = static_cast<Real>(read_f32_strict(is, "embedding file"));
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after embedding payload: " + path);
    return m;
}

inline void save_map(const LinearMap& map, const std::string& path) {
    save_embedding(map.w, path, map_method_name(map.method));
}

inline LinearMap load_map(const std::string& path) {
    LinearMap map;
    std::string tag;
    map.w = load_embedding<double>(path, &tag);
    if (tag.empty()) throw FormatError("map file has no method line: " + path);
    map.method = map_method_from_name(tag);
    return map;
}

}  // namespace relex

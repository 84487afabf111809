#include "gcq/polytope.hpp"

#include <algorithm>
#include <boost/rational.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace gcq {

namespace {

using Rat = boost::rational<long long>;

long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
long long ceil_div(long long a, long long b) { return -floor_div(-a, b); }

struct IRow {
  IVec c;
  long long off;
  bool operator<(const IRow& o) const { return std::tie(c, off) < std::tie(o.c, o.off); }
};

void normalize(IRow& r) {
  long long g = std::abs(r.off);
  for (long long v : r.c) g = std::gcd(g, std::abs(v));
  if (g > 1) {
    for (auto& v : r.c) v /= g;
    r.off /= g;
  }
}

// Keep the tightest offset per coefficient vector.
std::vector<IRow> dedupe(std::vector<IRow> rows) {
  std::map<IVec, long long> best;
  for (auto& r : rows) {
    auto it = best.find(r.c);
    if (it == best.end() || r.off < it->second) best[r.c] = r.off;
  }
  std::vector<IRow> out;
  out.reserve(best.size());
  for (auto& [c, off] : best) out.push_back({c, off});
  return out;
}

// levels[k]: rows in x_0..x_k with nonzero x_k coefficient. Returns false if
// a constant row is violated (empty polytope).
bool fourier_motzkin(int dim, const std::vector<Facet>& facets, std::vector<std::vector<IRow>>& levels) {
  std::vector<IRow> cur;
  for (const auto& f : facets) cur.push_back({f.normal, f.offset});
  levels.assign(dim, {});
  for (int k = dim - 1; k >= 0; --k) {
    std::vector<IRow> pos, neg, rest;
    for (auto& r : cur) {
      if (r.c[k] > 0)
        pos.push_back(r);
      else if (r.c[k] < 0)
        neg.push_back(r);
      else
        rest.push_back(r);
    }
    levels[k] = pos;
    levels[k].insert(levels[k].end(), neg.begin(), neg.end());
    if (pos.empty() || neg.empty()) {
      throw std::invalid_argument("polytope is unbounded in coordinate " + std::to_string(k + 1));
    }
    std::vector<IRow> next = rest;
    for (auto& p : pos) {
      for (auto& q : neg) {
        long long cp = p.c[k], cq = -q.c[k];
        IRow r{IVec(dim, 0), 0};
        for (int i = 0; i < dim; ++i) r.c[i] = cq * p.c[i] + cp * q.c[i];
        r.off = cq * p.off + cp * q.off;
        r.c[k] = 0;
        normalize(r);
        next.push_back(r);
      }
    }
    cur = dedupe(std::move(next));
  }
  for (auto& r : cur) {
    if (r.off < 0) return false;
  }
  return true;
}

long long det_bareiss(std::vector<IVec> m) {
  const int n = static_cast<int>(m.size());
  long long sign = 1, prev = 1;
  for (int k = 0; k < n - 1; ++k) {
    if (m[k][k] == 0) {
      int p = k + 1;
      while (p < n && m[p][k] == 0) ++p;
      if (p == n) return 0;
      std::swap(m[k], m[p]);
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i)
      for (int j = k + 1; j < n; ++j) m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
    prev = m[k][k];
  }
  return sign * m[n - 1][n - 1];
}

// Solve the square rational system; false if singular.
bool solve_rational(std::vector<std::vector<Rat>> A, std::vector<Rat> b, std::vector<Rat>& x) {
  const int n = static_cast<int>(b.size());
  for (int k = 0; k < n; ++k) {
    int p = k;
    while (p < n && A[p][k] == Rat(0)) ++p;
    if (p == n) return false;
    std::swap(A[k], A[p]);
    std::swap(b[k], b[p]);
    for (int i = 0; i < n; ++i) {
      if (i == k || A[i][k] == Rat(0)) continue;
      Rat f = A[i][k] / A[k][k];
      for (int j = k; j < n; ++j) A[i][j] -= f * A[k][j];
      b[i] -= f * b[k];
    }
  }
  x.resize(n);
  for (int i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
  return true;
}

// Exact vertices and their tight facet sets.
std::map<std::vector<Rat>, std::vector<std::size_t>> exact_vertices(const DelzantPolytope& P) {
  const int d = P.dim();
  const std::size_t f = P.num_facets();
  std::map<std::vector<Rat>, std::vector<std::size_t>> out;
  std::vector<bool> pick(f, false);
  std::fill(pick.begin(), pick.begin() + d, true);
  do {
    std::vector<std::vector<Rat>> A;
    std::vector<Rat> b;
    for (std::size_t j = 0; j < f; ++j) {
      if (!pick[j]) continue;
      std::vector<Rat> row(d);
      for (int i = 0; i < d; ++i) row[i] = Rat(P.facets()[j].normal[i]);
      A.push_back(row);
      b.push_back(Rat(-P.facets()[j].offset));
    }
    std::vector<Rat> x;
    if (!solve_rational(A, b, x)) continue;
    if (out.count(x)) continue;
    bool feasible = true;
    std::vector<std::size_t> tight;
    for (std::size_t j = 0; j < f && feasible; ++j) {
      Rat v(P.facets()[j].offset);
      for (int i = 0; i < d; ++i) v += x[i] * P.facets()[j].normal[i];
      if (v < Rat(0)) feasible = false;
      if (v == Rat(0)) tight.push_back(j);
    }
    if (feasible) out.emplace(x, tight);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return out;
}

}  // namespace

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

DelzantPolytope::DelzantPolytope(int dim, std::vector<Facet> facets, std::vector<std::string> labels,
                                 DelzantCheck check, std::string skip_reason)
    : dim_(dim), facets_(std::move(facets)), labels_(std::move(labels)) {
  if (dim_ < 1) throw std::invalid_argument("polytope dimension must be >= 1");
  if (facets_.empty()) throw std::invalid_argument("polytope needs facets");
  for (const auto& f : facets_) {
    if (static_cast<int>(f.normal.size()) != dim_) throw std::invalid_argument("facet normal has wrong length");
    long long g = 0;
    for (long long v : f.normal) g = std::gcd(g, std::abs(v));
    if (g != 1) throw std::invalid_argument("facet normal is not primitive");
  }
  if (labels_.empty()) {
    for (int i = 0; i < dim_; ++i) labels_.push_back("x" + std::to_string(i + 1));
  }
  if (static_cast<int>(labels_.size()) != dim_) throw std::invalid_argument("label count differs from dimension");
  normals_.resize(static_cast<Eigen::Index>(facets_.size()), dim_);
  offsets_.resize(static_cast<Eigen::Index>(facets_.size()));
  for (std::size_t j = 0; j < facets_.size(); ++j) {
    for (int i = 0; i < dim_; ++i) normals_(j, i) = static_cast<double>(facets_[j].normal[i]);
    offsets_(j) = static_cast<double>(facets_[j].offset);
  }
  std::vector<std::vector<IRow>> levels;
  if (!fourier_motzkin(dim_, facets_, levels)) throw std::invalid_argument("polytope is empty");
  interior_point();  // throws when the interior is empty
  if (check == DelzantCheck::Verify) {
    DelzantReport r = check_delzant(*this);
    if (!r.ok()) throw std::invalid_argument("not Delzant: " + r.message);
    delzant_verified_ = true;
    delzant_note_ = "vertex unimodularity verified at " + std::to_string(r.vertices) + " vertices";
  } else {
    delzant_note_ = skip_reason.empty() ? "Delzant check skipped" : skip_reason;
  }
}

double DelzantPolytope::support_value(std::size_t j, const Vec& p) const {
  if (j >= facets_.size()) throw std::out_of_range("facet index out of range");
  if (p.size() != dim_) throw std::invalid_argument("dimension mismatch");
  return normals_.row(static_cast<Eigen::Index>(j)).dot(p) + offsets_(static_cast<Eigen::Index>(j));
}

long long DelzantPolytope::support_value(std::size_t j, const IVec& p) const {
  if (j >= facets_.size()) throw std::out_of_range("facet index out of range");
  if (static_cast<int>(p.size()) != dim_) throw std::invalid_argument("dimension mismatch");
  long long v = facets_[j].offset;
  for (int i = 0; i < dim_; ++i) v += facets_[j].normal[i] * p[i];
  return v;
}

Vec DelzantPolytope::support_values(const Vec& p) const {
  if (p.size() != dim_) throw std::invalid_argument("dimension mismatch");
  return normals_ * p + offsets_;
}

bool DelzantPolytope::contains(const Vec& p, bool strict, double tol) const {
  Vec l = support_values(p);
  for (Eigen::Index j = 0; j < l.size(); ++j) {
    if (strict ? !(l(j) > tol) : !(l(j) >= -tol)) return false;
  }
  return true;
}

bool DelzantPolytope::contains(const IVec& p, bool strict) const {
  for (std::size_t j = 0; j < facets_.size(); ++j) {
    long long v = support_value(j, p);
    if (strict ? v <= 0 : v < 0) return false;
  }
  return true;
}

Vec DelzantPolytope::interior_point() const {
  BoundSystem bs(*this);
  Vec x(dim_);
  for (int k = 0; k < dim_; ++k) {
    auto [lo, hi] = bs.range(k, x.data());
    if (!(hi - lo > 1e-12 * (1.0 + std::abs(lo) + std::abs(hi)))) {
      throw std::invalid_argument("polytope has empty interior");
    }
    x(k) = 0.5 * (lo + hi);
  }
  return x;
}

std::vector<Vec> DelzantPolytope::vertices() const {
  std::vector<Vec> out;
  for (auto& [x, tight] : exact_vertices(*this)) {
    Vec v(dim_);
    for (int i = 0; i < dim_; ++i) v(i) = boost::rational_cast<double>(x[i]);
    out.push_back(v);
  }
  return out;
}

Vec DelzantPolytope::barycenter() const {
  auto vs = vertices();
  Vec c = Vec::Zero(dim_);
  for (auto& v : vs) c += v;
  return c / static_cast<double>(vs.size());
}

DelzantReport check_delzant(const DelzantPolytope& P) {
  DelzantReport rep;
  auto verts = exact_vertices(P);
  rep.vertices = verts.size();
  for (auto& [x, tight] : verts) {
    if (static_cast<int>(tight.size()) != P.dim()) {
      rep.simple = false;
      rep.message = "vertex with " + std::to_string(tight.size()) + " facets";
      return rep;
    }
    std::vector<IVec> m;
    for (std::size_t j : tight) m.push_back(P.facets()[j].normal);
    if (std::abs(det_bareiss(m)) != 1) {
      rep.unimodular = false;
      rep.message = "vertex cone is not unimodular";
      return rep;
    }
  }
  return rep;
}

std::vector<IVec> lattice_points(const DelzantPolytope& P) {
  std::vector<std::vector<IRow>> levels;
  std::vector<IVec> out;
  if (!fourier_motzkin(P.dim(), P.facets(), levels)) return out;
  const int d = P.dim();
  IVec x(d, 0);
  // Depth-first over coordinates in order; each range is exact.
  auto rec = [&](auto&& self, int k) -> void {
    long long lo = std::numeric_limits<long long>::min();
    long long hi = std::numeric_limits<long long>::max();
    for (const auto& r : levels[k]) {
      long long rest = r.off;
      for (int i = 0; i < k; ++i) rest += r.c[i] * x[i];
      if (r.c[k] > 0)
        lo = std::max(lo, ceil_div(-rest, r.c[k]));
      else
        hi = std::min(hi, floor_div(rest, -r.c[k]));
    }
    for (long long v = lo; v <= hi; ++v) {
      x[k] = v;
      if (k + 1 == d)
        out.push_back(x);
      else
        self(self, k + 1);
    }
  };
  rec(rec, 0);
  return out;
}

IVec weight_from_a(const IVec& a) {
  IVec lam(a.size() + 1, 0);
  for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) lam[i] = lam[i + 1] + a[i];
  return lam;
}

int gc_index(int l, int j) { return (l - 1) * l / 2 + (j - 1); }

std::string gc_label(int l, int j) { return "lambda_" + std::to_string(l) + "^" + std::to_string(j); }

DelzantPolytope gc_polytope(int n, const IVec& a) {
  if (n < 2) throw std::invalid_argument("gc_polytope needs n >= 2");
  if (static_cast<int>(a.size()) != n - 1) throw std::invalid_argument("gc_polytope needs n-1 weights");
  for (long long v : a)
    if (v < 1) throw std::invalid_argument("weights a_i must be positive");
  const IVec lam = weight_from_a(a);
  const int d = n * (n - 1) / 2;
  std::vector<Facet> facets;
  for (int l = 1; l <= n - 1; ++l) {
    for (int j = 1; j <= l; ++j) {
      // lambda_{l+1}^j >= lambda_l^j
      Facet up{IVec(d, 0), 0};
      up.normal[gc_index(l, j)] = -1;
      if (l + 1 == n)
        up.offset = lam[j - 1];
      else
        up.normal[gc_index(l + 1, j)] = 1;
      // lambda_l^j >= lambda_{l+1}^{j+1}
      Facet lo{IVec(d, 0), 0};
      lo.normal[gc_index(l, j)] = 1;
      if (l + 1 == n)
        lo.offset = -lam[j];
      else
        lo.normal[gc_index(l + 1, j + 1)] = -1;
      facets.push_back(up);
      facets.push_back(lo);
    }
  }
  std::vector<std::string> labels;
  for (int l = 1; l <= n - 1; ++l)
    for (int j = 1; j <= l; ++j) labels.push_back(gc_label(l, j));
  return DelzantPolytope(d, facets, labels, DelzantCheck::Skip,
                         "Delzant check skipped: Gelfand-Cetlin polytopes have non-simple vertices for n >= 3");
}

long long weyl_dim(const IVec& lambda) {
  const int n = static_cast<int>(lambda.size());
  for (int i = 0; i + 1 < n; ++i)
    if (lambda[i] < lambda[i + 1]) throw std::invalid_argument("weyl_dim needs a weakly decreasing weight");
  __int128 num = 1, den = 1;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      num *= static_cast<__int128>(lambda[i] - lambda[j] + j - i);
      den *= static_cast<__int128>(j - i);
      __int128 g = num, h = den;
      while (h != 0) {
        __int128 t = g % h;
        g = h;
        h = t;
      }
      num /= g;
      den /= g;
    }
  }
  if (den != 1) throw std::logic_error("weyl_dim produced a non-integer");
  return static_cast<long long>(num);
}

DelzantPolytope interval(long long lo, long long hi) {
  if (!(lo < hi)) throw std::invalid_argument("interval needs lo < hi");
  return DelzantPolytope(1, {Facet{{1}, -lo}, Facet{{-1}, hi}}, {"x"});
}

DelzantPolytope simplex(int k, long long a, const std::string& prefix) {
  if (k < 1 || a < 1) throw std::invalid_argument("simplex needs k >= 1 and a >= 1");
  std::vector<Facet> facets;
  for (int i = 0; i < k; ++i) {
    Facet f{IVec(k, 0), 0};
    f.normal[i] = 1;
    facets.push_back(f);
  }
  facets.push_back(Facet{IVec(k, -1), a});
  std::vector<std::string> labels;
  for (int i = 0; i < k; ++i) labels.push_back(prefix + std::to_string(i + 1));
  return DelzantPolytope(k, facets, labels);
}

DelzantPolytope product_polytope(const std::vector<DelzantPolytope>& Ps) {
  if (Ps.empty()) throw std::invalid_argument("product of zero polytopes");
  int d = 0;
  for (const auto& P : Ps) d += P.dim();
  std::vector<Facet> facets;
  std::vector<std::string> labels;
  int shift = 0;
  bool all_verified = true;
  for (const auto& P : Ps) {
    for (const auto& f : P.facets()) {
      Facet g{IVec(d, 0), f.offset};
      for (int i = 0; i < P.dim(); ++i) g.normal[shift + i] = f.normal[i];
      facets.push_back(g);
    }
    labels.insert(labels.end(), P.labels().begin(), P.labels().end());
    all_verified = all_verified && P.delzant_verified();
    shift += P.dim();
  }
  // Products of Delzant polytopes are Delzant; verify exhaustively while cheap.
  if (all_verified && d <= 6) return DelzantPolytope(d, facets, labels, DelzantCheck::Verify);
  return DelzantPolytope(d, facets, labels, DelzantCheck::Skip,
                         all_verified ? "Delzant by product of verified factors" : "factor not verified");
}

DelzantPolytope pluecker_polytope(int n, const IVec& a) {
  if (static_cast<int>(a.size()) != n - 1) throw std::invalid_argument("pluecker_polytope needs n-1 weights");
  std::vector<DelzantPolytope> factors;
  for (int l = 1; l <= n - 1; ++l) {
    // Coordinates: index sets of size l other than {1..l}, lexicographic.
    std::vector<std::string> names;
    std::vector<int> idx(l);
    std::iota(idx.begin(), idx.end(), 1);
    bool first = true;
    while (true) {
      if (!first) {
        std::string s = "q_";
        for (int v : idx) s += std::to_string(v);
        names.push_back(s);
      }
      first = false;
      int i = l - 1;
      while (i >= 0 && idx[i] == n - l + i + 1) --i;
      if (i < 0) break;
      ++idx[i];
      for (int k = i + 1; k < l; ++k) idx[k] = idx[k - 1] + 1;
    }
    DelzantPolytope S = simplex(static_cast<int>(names.size()), a[l - 1]);
    factors.push_back(DelzantPolytope(S.dim(), S.facets(), names));
  }
  return product_polytope(factors);
}

DelzantPolytope affine_image(const DelzantPolytope& P, const Eigen::MatrixXi& A, const IVec& b,
                             std::vector<std::string> labels) {
  const int d = P.dim();
  if (A.rows() != d || A.cols() != d || static_cast<int>(b.size()) != d)
    throw std::invalid_argument("affine_image dimension mismatch");
  std::vector<IVec> m(d, IVec(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m[i][j] = A(i, j);
  long long det = det_bareiss(m);
  if (std::abs(det) != 1) throw std::invalid_argument("affine_image needs a unimodular matrix");
  // Integer inverse via exact rational solve of A X = I.
  std::vector<std::vector<Rat>> R(d, std::vector<Rat>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) R[i][j] = Rat(A(i, j));
  Eigen::MatrixXi Ainv(d, d);
  for (int c = 0; c < d; ++c) {
    std::vector<Rat> e(d, Rat(0)), x;
    e[c] = Rat(1);
    solve_rational(R, e, x);
    for (int i = 0; i < d; ++i) Ainv(i, c) = static_cast<int>(boost::rational_cast<long long>(x[i]));
  }
  std::vector<Facet> facets;
  for (const auto& f : P.facets()) {
    Facet g{IVec(d, 0), f.offset};
    for (int j = 0; j < d; ++j) {
      long long v = 0;
      for (int i = 0; i < d; ++i) v += f.normal[i] * Ainv(i, j);
      g.normal[j] = v;
    }
    for (int j = 0; j < d; ++j) g.offset -= g.normal[j] * b[j];
    facets.push_back(g);
  }
  return DelzantPolytope(d, facets, std::move(labels),
                         P.delzant_verified() ? DelzantCheck::Verify : DelzantCheck::Skip, P.delzant_note());
}

BoundSystem::BoundSystem(const DelzantPolytope& P) {
  std::vector<std::vector<IRow>> ilev;
  if (!fourier_motzkin(P.dim(), P.facets(), ilev)) throw std::invalid_argument("polytope is empty");
  levels_.resize(P.dim());
  for (int k = 0; k < P.dim(); ++k) {
    for (auto& r : ilev[k]) {
      Row row{Vec(k + 1), static_cast<double>(r.off)};
      for (int i = 0; i <= k; ++i) row.coeff(i) = static_cast<double>(r.c[i]);
      levels_[k].push_back(row);
    }
  }
}

std::pair<double, double> BoundSystem::range(int k, const double* prefix) const {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (const auto& r : levels_[k]) {
    double rest = r.offset;
    for (int i = 0; i < k; ++i) rest += r.coeff(i) * prefix[i];
    double c = r.coeff(k);
    if (c > 0)
      lo = std::max(lo, -rest / c);
    else
      hi = std::min(hi, rest / -c);
  }
  return {lo, hi};
}

}  // namespace gcq

#include "gcq/flag.hpp"

#include <algorithm>
#include <numeric>

#include "gcq/rng.hpp"

namespace gcq {

const cplx& PlueckerCoords::at(const IndexSet& I) const {
  if (I.empty() || static_cast<int>(I.size()) >= n + 1) throw std::out_of_range("index set size");
  auto it = levels.at(I.size() - 1).find(I);
  if (it == levels[I.size() - 1].end()) throw std::out_of_range("unknown index set " + index_string(I));
  return it->second;
}

std::string index_string(const IndexSet& I) {
  std::string s;
  for (int i : I) s += std::to_string(i);
  return s;
}

IndexSet parse_index(const std::string& s) {
  IndexSet I;
  for (char c : s) {
    if (c < '1' || c > '9') throw std::invalid_argument("bad index set " + s);
    I.push_back(c - '0');
  }
  if (!std::is_sorted(I.begin(), I.end()) || std::adjacent_find(I.begin(), I.end()) != I.end())
    throw std::invalid_argument("index set must be increasing: " + s);
  return I;
}

std::vector<IndexSet> subsets(int n, int l) {
  std::vector<IndexSet> out;
  IndexSet I(l);
  std::iota(I.begin(), I.end(), 1);
  if (l < 0 || l > n) return out;
  for (;;) {
    out.push_back(I);
    int k = l - 1;
    while (k >= 0 && I[k] == n - l + k + 1) --k;
    if (k < 0) break;
    ++I[k];
    for (int j = k + 1; j < l; ++j) I[j] = I[j - 1] + 1;
  }
  return out;
}

IMat weight_matrix(int n) {
  if (n < 1) throw std::invalid_argument("n must be positive");
  IMat w = IMat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) {
      long long p = 1;
      for (int k = 0; k < i - j - 1; ++k) p *= 3;
      w(i, j) = p;
    }
  return w;
}

void check_flag(const CMat& V) {
  if (V.rows() != V.cols() || V.rows() < 2) throw std::invalid_argument("flag matrix must be square, n >= 2");
  if (!V.allFinite()) throw std::invalid_argument("flag matrix has non-finite entries");
  if (!(std::abs(V.fullPivLu().determinant()) > 1e-12)) throw std::invalid_argument("flag matrix is singular");
}

namespace {

cplx int_pow(cplx t, long long e) {
  cplx r(1.0, 0.0), b = t;
  while (e > 0) {
    if (e & 1) r *= b;
    b *= b;
    e >>= 1;
  }
  return r;
}

int parity(const std::vector<int>& p) {
  int inv = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (p[i] > p[j]) ++inv;
  return inv % 2 ? -1 : 1;
}

}  // namespace

PlueckerCoords deformed_pluecker(const CMat& V, cplx t) {
  check_flag(V);
  const int n = static_cast<int>(V.rows());
  const IMat w = weight_matrix(n);
  PlueckerCoords q;
  q.n = n;
  q.levels.resize(n - 1);
  for (int l = 1; l < n; ++l) {
    for (const IndexSet& I : subsets(n, l)) {
      long long base = 0;
      for (int k = 0; k < l; ++k) base += w(I[k] - 1, k);
      std::vector<int> perm(l);
      std::iota(perm.begin(), perm.end(), 0);
      cplx sum(0.0, 0.0);
      do {
        long long e = -base;
        cplx prod(1.0, 0.0);
        for (int k = 0; k < l; ++k) {
          prod *= V(I[k] - 1, perm[k]);
          e += w(I[k] - 1, perm[k]);
        }
        if (e < 0) throw std::logic_error("negative t-exponent in deformed minor");
        sum += static_cast<double>(parity(perm)) * prod * int_pow(t, e);
      } while (std::next_permutation(perm.begin(), perm.end()));
      q.levels[l - 1][I] = sum;
    }
  }
  return q;
}

PlueckerCoords pluecker(const CMat& V) { return deformed_pluecker(V, cplx(1.0, 0.0)); }

cplx pluecker_relation_residual(const PlueckerCoords& q, cplx t) {
  if (q.n != 3) throw std::invalid_argument("relation residual is defined for n = 3");
  return q.at({1}) * q.at({2, 3}) - q.at({2}) * q.at({1, 3}) + t * q.at({3}) * q.at({1, 2});
}

CMat moment_matrix(const CMat& V, const IVec& a) {
  check_flag(V);
  const Eigen::Index n = V.rows();
  if (static_cast<Eigen::Index>(a.size()) != n - 1) throw std::invalid_argument("need n-1 weights");
  for (long long x : a)
    if (x <= 0) throw std::invalid_argument("weights must be positive");
  Eigen::HouseholderQR<CMat> qr(V);
  CMat Q = qr.householderQ() * CMat::Identity(n, n);
  CMat H = CMat::Zero(n, n);
  for (Eigen::Index l = 1; l < n; ++l) {
    auto Ql = Q.leftCols(l);
    H += static_cast<double>(a[l - 1]) * (Ql * Ql.adjoint());
  }
  return 0.5 * (H + H.adjoint());
}

GCValue gc_values(const CMat& H) {
  const Eigen::Index n = H.rows();
  GCValue g;
  for (Eigen::Index l = 1; l <= n; ++l) {
    CMat B = H.topLeftCorner(l, l);
    B = 0.5 * (B + B.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<CMat> es(B, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver failed", 0.0);
    std::vector<double> row(es.eigenvalues().data(), es.eigenvalues().data() + l);
    std::stable_sort(row.begin(), row.end(), std::greater<double>());
    g.rows.push_back(std::move(row));
  }
  return g;
}

GCValue gc_map(const CMat& V, const IVec& a) { return gc_values(moment_matrix(V, a)); }

Vec GCValue::coordinates() const {
  std::vector<double> c;
  for (std::size_t l = 0; l + 1 < rows.size(); ++l) c.insert(c.end(), rows[l].begin(), rows[l].end());
  return Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
}

CMat random_flag(std::uint64_t seed, int n) {
  if (n < 2) throw std::invalid_argument("n must be at least 2");
  Rng rng(seed);
  std::normal_distribution<double> N(0.0, std::sqrt(0.5));
  for (;;) {
    CMat V(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        double re = N(rng);
        V(i, j) = cplx(re, N(rng));
      }
    if (std::abs(V.fullPivLu().determinant()) >= 1e-6) return V;
  }
}

}  // namespace gcq

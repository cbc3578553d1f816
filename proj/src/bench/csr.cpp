#include "apr/bench/csr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>

#include "apr/error.hpp"

namespace apr::bench {

void CsrMatrix::validate() const {
  if (n_rows < 0 || n_cols < 0)
    throw UsageError("csr: negative dimensions");
  if (row_ptr.size() != static_cast<std::size_t>(n_rows) + 1)
    throw UsageError("csr: row_ptr length must be n_rows + 1");
  if (row_ptr.front() != 0)
    throw UsageError("csr: row_ptr[0] must be 0");
  for (std::size_t i = 1; i < row_ptr.size(); ++i)
    if (row_ptr[i] < row_ptr[i - 1])
      throw UsageError("csr: row_ptr must be non-decreasing");
  if (static_cast<std::int64_t>(col_idx.size()) != row_ptr.back() ||
      col_idx.size() != values.size())
    throw UsageError("csr: nnz arrays disagree with row_ptr");
  for (const auto c : col_idx)
    if (c < 0 || c >= n_cols)
      throw UsageError("csr: column index out of range");
}

CsrMatrix make_banded(std::int64_t n, std::int64_t half_bandwidth, std::uint64_t seed) {
  if (n <= 0 || half_bandwidth < 0)
    throw UsageError("banded generator: bad dimensions");
  CsrMatrix m;
  m.n_rows = m.n_cols = n;
  m.row_ptr.reserve(static_cast<std::size_t>(n) + 1);
  m.row_ptr.push_back(0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t lo = std::max<std::int64_t>(0, i - half_bandwidth);
    const std::int64_t hi = std::min<std::int64_t>(n - 1, i + half_bandwidth);
    for (std::int64_t j = lo; j <= hi; ++j) {
      m.col_idx.push_back(static_cast<std::int32_t>(j));
      m.values.push_back(i == j ? 4.0 + dist(rng) : dist(rng));
    }
    m.row_ptr.push_back(static_cast<std::int64_t>(m.col_idx.size()));
  }
  return m;
}

CsrMatrix make_random(std::int64_t n, std::int64_t nnz_per_row, std::uint64_t seed) {
  if (n <= 0 || nnz_per_row < 1)
    throw UsageError("random generator: bad dimensions");
  CsrMatrix m;
  m.n_rows = m.n_cols = n;
  m.row_ptr.push_back(0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<std::int32_t> cols;
  for (std::int64_t i = 0; i < n; ++i) {
    cols.clear();
    cols.push_back(static_cast<std::int32_t>(i));
    for (std::int64_t k = 1; k < nnz_per_row; ++k)
      cols.push_back(static_cast<std::int32_t>(pick(rng)));
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    for (const auto c : cols) {
      m.col_idx.push_back(c);
      m.values.push_back(c == i ? 4.0 + dist(rng) : dist(rng));
    }
    m.row_ptr.push_back(static_cast<std::int64_t>(m.col_idx.size()));
  }
  return m;
}

CsrMatrix read_matrix_market(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw UsageError("matrix market: empty input");
  std::istringstream banner(line);
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  if (tag != "%%MatrixMarket" || object != "matrix" || format != "coordinate")
    throw UsageError("matrix market: unsupported banner '" + line + "'");
  const bool pattern = field == "pattern";
  const bool symmetric = symmetry == "symmetric";
  if (field != "real" && field != "integer" && !pattern)
    throw UsageError("matrix market: unsupported field '" + field + "'");
  if (symmetry != "general" && !symmetric)
    throw UsageError("matrix market: unsupported symmetry '" + symmetry + "'");

  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%')
      break;
  }
  std::istringstream dims(line);
  std::int64_t rows = 0, cols = 0, entries = 0;
  if (!(dims >> rows >> cols >> entries))
    throw UsageError("matrix market: bad size line");

  std::vector<std::tuple<std::int64_t, std::int32_t, double>> triplets;
  triplets.reserve(static_cast<std::size_t>(entries));
  for (std::int64_t k = 0; k < entries; ++k) {
    std::int64_t i = 0, j = 0;
    double v = 1.0;
    if (!(in >> i >> j))
      throw UsageError("matrix market: truncated entry list");
    if (!pattern && !(in >> v))
      throw UsageError("matrix market: truncated entry list");
    if (i < 1 || i > rows || j < 1 || j > cols)
      throw UsageError("matrix market: entry out of bounds");
    triplets.emplace_back(i - 1, static_cast<std::int32_t>(j - 1), v);
    if (symmetric && i != j)
      triplets.emplace_back(j - 1, static_cast<std::int32_t>(i - 1), v);
  }
  std::sort(triplets.begin(), triplets.end());

  CsrMatrix m;
  m.n_rows = rows;
  m.n_cols = cols;
  m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
  for (const auto& [i, j, v] : triplets)
    ++m.row_ptr[static_cast<std::size_t>(i) + 1];
  for (std::size_t i = 1; i < m.row_ptr.size(); ++i)
    m.row_ptr[i] += m.row_ptr[i - 1];
  m.col_idx.reserve(triplets.size());
  m.values.reserve(triplets.size());
  for (const auto& [i, j, v] : triplets) {
    m.col_idx.push_back(j);
    m.values.push_back(v);
  }
  m.validate();
  return m;
}

CsrMatrix read_matrix_market_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw UsageError("cannot open matrix file '" + path + "'");
  return read_matrix_market(in);
}

void spmv_serial(const CsrMatrix& m, std::span<const double> x, std::span<double> y) {
  if (static_cast<std::int64_t>(x.size()) != m.n_cols ||
      static_cast<std::int64_t>(y.size()) != m.n_rows)
    throw UsageError("spmv: vector sizes disagree with the matrix");
  for (std::int64_t i = 0; i < m.n_rows; ++i) {
    double acc = 0;
    for (std::int64_t k = m.row_ptr[static_cast<std::size_t>(i)];
         k < m.row_ptr[static_cast<std::size_t>(i) + 1]; ++k)
      acc += m.values[static_cast<std::size_t>(k)] *
             x[static_cast<std::size_t>(m.col_idx[static_cast<std::size_t>(k)])];
    y[static_cast<std::size_t>(i)] += acc;
  }
}

int RowPartition::owner_of(std::int64_t row) const {
  const auto it = std::upper_bound(cuts.begin(), cuts.end(), row);
  return static_cast<int>(it - cuts.begin()) - 1;
}

RowPartition partition_rows_by_nnz(const CsrMatrix& m, int parts) {
  if (m.n_rows == 0 || m.nnz() == 0)
    throw UsageError("cannot partition an empty matrix");
  if (parts < 1 || static_cast<std::int64_t>(parts) > m.n_rows)
    throw UsageError("parts must be in [1, n_rows]");

  RowPartition p;
  p.cuts.resize(static_cast<std::size_t>(parts) + 1);
  p.cuts.front() = 0;
  p.cuts.back() = m.n_rows;
  const double ideal = static_cast<double>(m.nnz()) / parts;
  std::int64_t prev = 0;
  for (int k = 1; k < parts; ++k) {
    const double target = ideal * k;
    // Closest row boundary to the ideal share, kept feasible so every block
    // stays non-empty.
    std::int64_t lo = prev + 1;
    std::int64_t hi = m.n_rows - (parts - k);
    std::int64_t best = lo;
    double best_err = std::abs(static_cast<double>(m.row_ptr[static_cast<std::size_t>(lo)]) - target);
    for (std::int64_t cut = lo + 1; cut <= hi; ++cut) {
      const double err =
          std::abs(static_cast<double>(m.row_ptr[static_cast<std::size_t>(cut)]) - target);
      if (err < best_err) {
        best_err = err;
        best = cut;
      }
      if (static_cast<double>(m.row_ptr[static_cast<std::size_t>(cut)]) > target &&
          err >= best_err)
        break; // cumulative counts are monotone; past the target it only gets worse
    }
    p.cuts[static_cast<std::size_t>(k)] = best;
    prev = best;
  }
  return p;
}

CsrMatrix take_rows(const CsrMatrix& m, std::int64_t row_begin, std::int64_t row_end) {
  CsrMatrix out;
  out.n_rows = row_end - row_begin;
  out.n_cols = m.n_cols;
  out.row_ptr.reserve(static_cast<std::size_t>(out.n_rows) + 1);
  const std::int64_t base = m.row_ptr[static_cast<std::size_t>(row_begin)];
  for (std::int64_t r = row_begin; r <= row_end; ++r)
    out.row_ptr.push_back(m.row_ptr[static_cast<std::size_t>(r)] - base);
  out.col_idx.assign(m.col_idx.begin() + base,
                     m.col_idx.begin() + m.row_ptr[static_cast<std::size_t>(row_end)]);
  out.values.assign(m.values.begin() + base,
                    m.values.begin() + m.row_ptr[static_cast<std::size_t>(row_end)]);
  return out;
}

PhaseSplit spmv_phase_split(const CsrMatrix& block, std::int64_t owned_col_begin,
                            std::int64_t owned_col_end) {
  PhaseSplit split;
  for (const auto c : block.col_idx)
    if (c < owned_col_begin || c >= owned_col_end)
      split.remote_cols.push_back(c);
  std::sort(split.remote_cols.begin(), split.remote_cols.end());
  split.remote_cols.erase(
      std::unique(split.remote_cols.begin(), split.remote_cols.end()),
      split.remote_cols.end());

  const auto remote_index = [&](std::int32_t c) {
    return static_cast<std::int32_t>(
        std::lower_bound(split.remote_cols.begin(), split.remote_cols.end(), c) -
        split.remote_cols.begin());
  };

  split.local.n_rows = split.nonlocal.n_rows = block.n_rows;
  split.local.n_cols = owned_col_end - owned_col_begin;
  split.nonlocal.n_cols = static_cast<std::int64_t>(split.remote_cols.size());
  split.local.row_ptr.push_back(0);
  split.nonlocal.row_ptr.push_back(0);
  for (std::int64_t i = 0; i < block.n_rows; ++i) {
    for (std::int64_t k = block.row_ptr[static_cast<std::size_t>(i)];
         k < block.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
      const auto c = block.col_idx[static_cast<std::size_t>(k)];
      const auto v = block.values[static_cast<std::size_t>(k)];
      if (c >= owned_col_begin && c < owned_col_end) {
        split.local.col_idx.push_back(static_cast<std::int32_t>(c - owned_col_begin));
        split.local.values.push_back(v);
      } else {
        split.nonlocal.col_idx.push_back(remote_index(c));
        split.nonlocal.values.push_back(v);
      }
    }
    split.local.row_ptr.push_back(static_cast<std::int64_t>(split.local.col_idx.size()));
    split.nonlocal.row_ptr.push_back(
        static_cast<std::int64_t>(split.nonlocal.col_idx.size()));
  }
  return split;
}

} // namespace apr::bench

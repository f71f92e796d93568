#include "shf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

namespace shf {

void Dataset::validate() const {
  if (n_rows() < 1) throw invalid_data("dataset must have at least one row");
  if (response.size() != n_rows())
    throw invalid_data("response length does not match feature rows");
  if (!features.allFinite() || !response.allFinite())
    throw invalid_data("dataset contains non-finite entries");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string()
                                         : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw invalid_data("non-numeric cell '" + cell + "' at row " +
                       std::to_string(row) + ", column " + std::to_string(col));
  }
  return value;
}

}  // namespace

Dataset read_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw invalid_data("cannot open CSV file: " + path);

  std::string line;
  std::vector<std::string> header;
  int response_col = opts.response_index;
  std::size_t row_number = 0;

  if (opts.has_header) {
    if (!std::getline(in, line)) throw invalid_data("empty CSV file: " + path);
    ++row_number;
    header = split_line(line);
    if (!opts.response_name.empty()) {
      auto it = std::find(header.begin(), header.end(), opts.response_name);
      if (it == header.end())
        throw invalid_data("response column '" + opts.response_name +
                           "' not found in header");
      response_col = static_cast<int>(it - header.begin());
    }
  }
  if (response_col < 0)
    throw invalid_data("response column must be given by name or index");

  std::vector<std::vector<double>> rows;
  std::size_t n_cols = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (n_cols == 0) n_cols = cells.size();
    if (cells.size() != n_cols)
      throw invalid_data("row " + std::to_string(row_number) + " has " +
                         std::to_string(cells.size()) + " cells, expected " +
                         std::to_string(n_cols));
    std::vector<double> parsed(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      parsed[c] = parse_cell(cells[c], row_number, c);
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw invalid_data("CSV has no data rows: " + path);
  if (static_cast<std::size_t>(response_col) >= n_cols)
    throw invalid_data("response column index out of range");

  const Index n = static_cast<Index>(rows.size());
  const Index p = static_cast<Index>(n_cols) - 1;
  Dataset data;
  data.features.resize(n, p);
  data.response.resize(n);
  for (Index i = 0; i < n; ++i) {
    Index k = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (static_cast<int>(c) == response_col)
        data.response(i) = rows[i][c];
      else
        data.features(i, k++) = rows[i][c];
    }
  }

  if (opts.standardize_features && p > 0) {
    for (Index j = 0; j < p; ++j) {
      const double mean = data.features.col(j).mean();
      const double sd =
          std::sqrt((data.features.col(j).array() - mean).square().sum() /
                    std::max<Index>(n - 1, 1));
      data.features.col(j).array() -= mean;
      if (sd > 0) data.features.col(j) /= sd;
    }
  }

  data.validate();
  return data;
}

void write_csv(const std::string& path, const Dataset& data, bool header) {
  std::ofstream out(path);
  if (!out) throw invalid_data("cannot open for writing: " + path);
  out.precision(17);
  const Index p = data.n_features();
  if (header) {
    for (Index j = 0; j < p; ++j) out << "x" << (j + 1) << ",";
    out << "y\n";
  }
  for (Index i = 0; i < data.n_rows(); ++i) {
    for (Index j = 0; j < p; ++j) out << data.features(i, j) << ",";
    out << data.response(i) << "\n";
  }
}

Dataset make_synthetic_gaussian(Index n, Index d, double c, std::uint64_t seed,
                                Vec* theta_star_out) {
  if (c <= 0) throw invalid_parameter("c must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec theta(d);
  for (Index j = 0; j < d; ++j) theta(j) = normal(rng);
  Dataset data;
  data.features.resize(n, d);
  data.response = Vec::Zero(n);
  const double sd = std::sqrt(c);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) data.features(i, j) = theta(j) + sd * normal(rng);
  if (theta_star_out) *theta_star_out = theta;
  return data;
}

Dataset make_synthetic_linreg(Index n, Index p, std::uint64_t seed,
                              Vec* beta_star_out, double* sigma2_star_out) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec beta(p + 1);
  for (Index j = 0; j <= p; ++j) beta(j) = normal(rng);
  const double sigma2 = 1.0;
  Dataset data;
  data.features.resize(n, p);
  data.response.resize(n);
  for (Index i = 0; i < n; ++i) {
    double mu = beta(0);
    for (Index j = 0; j < p; ++j) {
      data.features(i, j) = normal(rng);
      mu += beta(j + 1) * data.features(i, j);
    }
    data.response(i) = mu + std::sqrt(sigma2) * normal(rng);
  }
  if (beta_star_out) *beta_star_out = beta;
  if (sigma2_star_out) *sigma2_star_out = sigma2;
  return data;
}

Dataset make_synthetic_logreg(Index n, Index p, std::uint64_t seed,
                              Vec* beta_star_out) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec beta(p + 1);
  for (Index j = 0; j <= p; ++j) beta(j) = normal(rng);
  Dataset data;
  data.features.resize(n, p);
  data.response.resize(n);
  for (Index i = 0; i < n; ++i) {
    double z = beta(0);
    for (Index j = 0; j < p; ++j) {
      data.features(i, j) = normal(rng);
      z += beta(j + 1) * data.features(i, j);
    }
    const double s = 1.0 / (1.0 + std::exp(-z));
    data.response(i) = unif(rng) < s ? 1.0 : 0.0;
  }
  if (beta_star_out) *beta_star_out = beta;
  return data;
}

}  // namespace shf

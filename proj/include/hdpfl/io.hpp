#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdpfl/models.hpp"

namespace hdpfl {

// Shortest round-tripping decimal representation, for byte-stable CSVs.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

/// One row per line, comma-separated decimals, no header.
inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split_line(line)) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty matrix");
  Eigen::MatrixXd m(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  return m;
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << fmt_double(m(i, j));
    }
    out << '\n';
  }
}

/// Dataset CSV: header row f0,...,f{d-1},label.
inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  auto header = split_line(line);
  if (header.size() < 2 || header.back() != "label")
    throw std::runtime_error(path + ": expected header f0,...,label");
  const std::size_t d = header.size() - 1;

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != d + 1) throw std::runtime_error(path + ": ragged rows");
    std::vector<double> row;
    for (std::size_t j = 0; j < d; ++j) row.push_back(std::stod(cells[j]));
    feats.push_back(std::move(row));
    labels.push_back(std::stoi(cells.back()));
  }
  if (feats.empty()) throw std::runtime_error(path + ": no samples");
  Dataset out;
  out.features.resize(static_cast<long>(feats.size()), static_cast<long>(d));
  out.labels.resize(static_cast<long>(labels.size()));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j)
      out.features(static_cast<long>(i), static_cast<long>(j)) = feats[i][j];
    out.labels(static_cast<long>(i)) = labels[i];
  }
  return out;
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (long j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (long i = 0; i < data.size(); ++i) {
    for (long j = 0; j < data.dim(); ++j) out << fmt_double(data.features(i, j)) << ',';
    out << data.labels(i) << '\n';
  }
}

}  // namespace hdpfl

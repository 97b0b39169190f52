#include "sks/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sks/errors.hpp"

namespace sks {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

double nmse(const std::vector<Eigen::VectorXd>& truth,
            const std::vector<Eigen::VectorXd>& est) {
  const size_t K = std::min(truth.size(), est.size());
  if (K == 0) throw ZeroReference("nmse: empty sequences");
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < K; ++k) {
    num += (truth[k] - est[k]).squaredNorm();
    den += truth[k].squaredNorm();
  }
  if (den <= 0.0) throw ZeroReference("nmse: zero reference energy");
  return num / den;
}

double to_db(double ratio) { return 10.0 * std::log10(ratio); }

double fsrr(const std::vector<Eigen::VectorXd>& true_u,
            const std::vector<Eigen::VectorXd>& est_u, double sigma_u) {
  if (!(sigma_u > 0)) throw ConfigError("fsrr: need sigma_u > 0");
  const size_t K = std::min(true_u.size(), est_u.size());
  if (K == 0) return 0.0;
  const double thresh = 0.8 * sigma_u;
  double acc = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const int m = static_cast<int>(true_u[k].size());
    int hamming = 0;
    for (int i = 0; i < m; ++i) {
      const bool truth = true_u[k](i) != 0.0;
      const bool est = std::abs(est_u[k](i)) > thresh;
      if (truth != est) ++hamming;
    }
    acc += static_cast<double>(hamming) / m;
  }
  return acc / static_cast<double>(K);
}

std::string metrics_csv_header() {
  return "algo,p,n,m,K,s,snr_db,seed,nmse_state,nmse_input,nmse_state_db,"
         "nmse_input_db,fsrr,runtime_s,iters,status";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.algo << ',' << r.p << ',' << r.n << ',' << r.m << ',' << r.K << ','
     << r.s << ',' << fmt17(r.snr_db) << ',' << r.seed << ','
     << fmt17(r.nmse_state) << ',' << fmt17(r.nmse_input) << ','
     << fmt17(to_db(r.nmse_state)) << ',' << fmt17(to_db(r.nmse_input)) << ','
     << fmt17(r.fsrr) << ',' << fmt17(r.runtime_s) << ',' << r.iters << ','
     << r.status;
  return os.str();
}

std::string metrics_to_csv(const std::vector<MetricsRecord>& rows) {
  std::ostringstream os;
  os << metrics_csv_header() << '\n';
  for (const auto& r : rows) os << metrics_csv_row(r) << '\n';
  return os.str();
}

std::vector<MetricsRecord> metrics_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::vector<MetricsRecord> rows;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != metrics_csv_header())
        throw ConfigError("metrics_from_csv: unexpected header");
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 16) throw ConfigError("metrics_from_csv: bad row");
    MetricsRecord r;
    r.algo = f[0];
    r.p = std::stoi(f[1]);
    r.n = std::stoi(f[2]);
    r.m = std::stoi(f[3]);
    r.K = std::stoi(f[4]);
    r.s = std::stoi(f[5]);
    r.snr_db = std::stod(f[6]);
    r.seed = std::stoll(f[7]);
    r.nmse_state = std::stod(f[8]);
    r.nmse_input = std::stod(f[9]);
    // columns 10, 11 are the derived dB values
    r.fsrr = std::stod(f[12]);
    r.runtime_s = std::stod(f[13]);
    r.iters = std::stoi(f[14]);
    r.status = f[15];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace sks

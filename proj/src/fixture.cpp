#include "sks/fixture.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sks/errors.hpp"

namespace sks {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17e", v);
  return buf;
}

MatSeq seq_from_blocks(const FixtureBlocks& blocks, const std::string& name,
                       int K) {
  if (fixture_has_block(blocks, name))
    return MatSeq(fixture_block(blocks, name));
  std::vector<Eigen::MatrixXd> mats;
  for (int k = 0; k < K; ++k) {
    std::string key = name + "." + std::to_string(k);
    if (!fixture_has_block(blocks, key))
      throw ConfigError("fixture: missing block " + name);
    mats.push_back(fixture_block(blocks, key));
  }
  return MatSeq(std::move(mats));
}

void seq_to_blocks(FixtureBlocks& blocks, const std::string& name,
                   const MatSeq& seq) {
  if (seq.broadcast()) {
    blocks.emplace_back(name, seq.at(0));
  } else {
    for (int k = 0; k < seq.count(); ++k)
      blocks.emplace_back(name + "." + std::to_string(k), seq.at(k));
  }
}

Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& vs) {
  if (vs.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd M(static_cast<int>(vs.size()), vs[0].size());
  for (size_t i = 0; i < vs.size(); ++i) M.row(static_cast<int>(i)) = vs[i];
  return M;
}

std::vector<Eigen::VectorXd> unstack_rows(const Eigen::MatrixXd& M) {
  std::vector<Eigen::VectorXd> vs;
  for (int i = 0; i < M.rows(); ++i) vs.push_back(M.row(i).transpose());
  return vs;
}

}  // namespace

void write_fixture(const std::string& path, const FixtureBlocks& blocks) {
  std::ofstream out(path);
  if (!out) throw ConfigError("fixture: cannot open " + path + " for writing");
  for (const auto& [name, M] : blocks) {
    out << name << ' ' << M.rows() << ' ' << M.cols() << '\n';
    for (int i = 0; i < M.rows(); ++i) {
      for (int j = 0; j < M.cols(); ++j) {
        if (j) out << ' ';
        out << fmt17(M(i, j));
      }
      out << '\n';
    }
  }
  if (!out) throw ConfigError("fixture: write failed for " + path);
}

FixtureBlocks read_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("fixture: cannot open " + path);
  FixtureBlocks blocks;
  std::string name;
  while (in >> name) {
    int rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
      throw ConfigError("fixture: bad header for block " + name);
    Eigen::MatrixXd M(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        if (!(in >> M(i, j)))
          throw ConfigError("fixture: truncated block " + name);
    blocks.emplace_back(name, std::move(M));
  }
  return blocks;
}

const Eigen::MatrixXd& fixture_block(const FixtureBlocks& blocks,
                                     const std::string& name) {
  for (const auto& [n, M] : blocks)
    if (n == name) return M;
  throw ConfigError("fixture: missing block " + name);
}

bool fixture_has_block(const FixtureBlocks& blocks, const std::string& name) {
  for (const auto& [n, M] : blocks)
    if (n == name) return true;
  return false;
}

FixtureBlocks model_to_blocks(const LdsModel& model) {
  FixtureBlocks blocks;
  Eigen::MatrixXd meta(1, 4);
  meta << model.n, model.m, model.p, model.K;
  blocks.emplace_back("meta", meta);
  seq_to_blocks(blocks, "A", model.A);
  seq_to_blocks(blocks, "B", model.B);
  seq_to_blocks(blocks, "C", model.C);
  seq_to_blocks(blocks, "D", model.D);
  seq_to_blocks(blocks, "Q", model.Q);
  seq_to_blocks(blocks, "R", model.R);
  return blocks;
}

LdsModel model_from_blocks(const FixtureBlocks& blocks) {
  const Eigen::MatrixXd& meta = fixture_block(blocks, "meta");
  if (meta.rows() != 1 || meta.cols() != 4)
    throw ConfigError("fixture: model meta block must be 1x4");
  LdsModel model;
  model.n = static_cast<int>(meta(0, 0));
  model.m = static_cast<int>(meta(0, 1));
  model.p = static_cast<int>(meta(0, 2));
  model.K = static_cast<int>(meta(0, 3));
  model.A = seq_from_blocks(blocks, "A", model.K);
  model.B = seq_from_blocks(blocks, "B", model.K);
  model.C = seq_from_blocks(blocks, "C", model.K);
  model.D = seq_from_blocks(blocks, "D", model.K);
  model.Q = seq_from_blocks(blocks, "Q", model.K);
  model.R = seq_from_blocks(blocks, "R", model.K);
  model.validate();
  return model;
}

FixtureBlocks trajectory_to_blocks(const SparseTrajectory& traj) {
  FixtureBlocks blocks;
  Eigen::MatrixXd meta(1, 3);
  meta << traj.sigma_u, traj.sigma_v, static_cast<double>(traj.seed);
  blocks.emplace_back("traj_meta", meta);
  blocks.emplace_back("x", stack_rows(traj.x));
  blocks.emplace_back("u", stack_rows(traj.u));
  blocks.emplace_back("y", stack_rows(traj.y));
  blocks.emplace_back("w", stack_rows(traj.w));
  blocks.emplace_back("v", stack_rows(traj.v));
  // Support sets as a K x m 0/1 mask.
  if (!traj.u.empty()) {
    Eigen::MatrixXd mask =
        Eigen::MatrixXd::Zero(static_cast<int>(traj.u.size()), traj.u[0].size());
    for (size_t k = 0; k < traj.supports.size(); ++k)
      for (int i : traj.supports[k]) mask(static_cast<int>(k), i) = 1.0;
    blocks.emplace_back("support_mask", mask);
  }
  return blocks;
}

SparseTrajectory trajectory_from_blocks(const FixtureBlocks& blocks) {
  SparseTrajectory traj;
  const Eigen::MatrixXd& meta = fixture_block(blocks, "traj_meta");
  if (meta.rows() != 1 || meta.cols() != 3)
    throw ConfigError("fixture: traj_meta block must be 1x3");
  traj.sigma_u = meta(0, 0);
  traj.sigma_v = meta(0, 1);
  traj.seed = static_cast<std::uint64_t>(meta(0, 2));
  traj.x = unstack_rows(fixture_block(blocks, "x"));
  traj.u = unstack_rows(fixture_block(blocks, "u"));
  traj.y = unstack_rows(fixture_block(blocks, "y"));
  traj.w = unstack_rows(fixture_block(blocks, "w"));
  traj.v = unstack_rows(fixture_block(blocks, "v"));
  if (fixture_has_block(blocks, "support_mask")) {
    const Eigen::MatrixXd& mask = fixture_block(blocks, "support_mask");
    for (int k = 0; k < mask.rows(); ++k) {
      std::vector<int> supp;
      for (int i = 0; i < mask.cols(); ++i)
        if (mask(k, i) != 0.0) supp.push_back(i);
      traj.supports.push_back(std::move(supp));
    }
  }
  return traj;
}

}  // namespace sks

#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "sks/model.hpp"

namespace sks {

// Plain-text fixture format: one matrix per block, header line
// "NAME rows cols", then row-major entries in scientific notation with 17
// significant digits. These files are the cross-language ground truth.
using FixtureBlocks = std::vector<std::pair<std::string, Eigen::MatrixXd>>;

void write_fixture(const std::string& path, const FixtureBlocks& blocks);
FixtureBlocks read_fixture(const std::string& path);

// Lookup helper; throws ConfigError when the block is absent.
const Eigen::MatrixXd& fixture_block(const FixtureBlocks& blocks,
                                     const std::string& name);
bool fixture_has_block(const FixtureBlocks& blocks, const std::string& name);

// Model and trajectory round-trip through the block format. Time-varying
// sequences are stored as NAME.0, NAME.1, ...; broadcast ones as NAME.
FixtureBlocks model_to_blocks(const LdsModel& model);
LdsModel model_from_blocks(const FixtureBlocks& blocks);

FixtureBlocks trajectory_to_blocks(const SparseTrajectory& traj);
SparseTrajectory trajectory_from_blocks(const FixtureBlocks& blocks);

}  // namespace sks

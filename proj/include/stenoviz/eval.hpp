#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stenoviz/train.hpp"
#include "stenoviz/volume.hpp"

namespace stenoviz::eval {

/// 2|P∩G| / (|P|+|G|); both empty counts as perfect agreement.
double dice(std::size_t intersection, std::size_t pred, std::size_t truth);

/// Dice on two equally sized binary planes/volumes.
double dice(const BinaryVolume& p, const BinaryVolume& g);

/// Pooled over every labeled slice's voxels.
double dice_on_labeled_slices(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels);

/// Mean of the per-slice Dice values.
double mean_slice_dice(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels);

/// One z plane of `v` as an nx x ny x 1 volume.
BinaryVolume slice_of(const BinaryVolume& v, int z);

/// Predicted 4-connected regions touching k >= 2 distinct truth regions add
/// k - 1 each. Inputs are single planes.
int slice_connections(const BinaryVolume& pred, const BinaryVolume& truth);

/// slice_connections averaged over the labeled slices.
double connection_count(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels);

struct SliceResult {
    int z = 0;
    double dice = 0;
    int connections = 0;
    std::size_t pred_voxels = 0;
    std::size_t truth_voxels = 0;
};

struct CaseResult {
    std::string id;
    double dice = 0;  // pooled
    double mean_slice_dice = 0;
    double connections = 0;
    std::vector<SliceResult> slices;
};

struct EvalReport {
    std::vector<CaseResult> cases;
    double mean_dice = 0;
    double mean_connections = 0;
};

CaseResult evaluate_case(const std::string& id, const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels);
/// Fills in the aggregate means.
EvalReport summarize(std::vector<CaseResult> cases);

nlohmann::json to_json(const EvalReport& r);
/// Cases as columns, Dice and connections as rows, plus a mean column.
std::string render_table(const EvalReport& r);

}  // namespace stenoviz::eval

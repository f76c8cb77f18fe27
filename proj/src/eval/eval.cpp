#include "stenoviz/eval.hpp"

#include <cstdio>
#include <numeric>
#include <set>

namespace stenoviz::eval {

namespace {

void check_label(const BinaryVolume& pred, const train::WeakLabel& wl) {
    const auto& d = pred.dims();
    if (wl.label.dims() != Dims3{d.x, d.y, 1})
        throw ShapeError("label for slice " + std::to_string(wl.z) + " does not match the prediction's x/y size");
    if (wl.z < 0 || wl.z >= d.z)
        throw ParameterError("labeled slice " + std::to_string(wl.z) + " outside the prediction");
}

struct Counts {
    std::size_t inter = 0, p = 0, g = 0;
};

Counts count_slice(const BinaryVolume& pred, const train::WeakLabel& wl) {
    Counts c;
    for (int y = 0; y < pred.dims().y; ++y)
        for (int x = 0; x < pred.dims().x; ++x) {
            const bool p = pred(x, y, wl.z) != 0, g = wl.label(x, y, 0) != 0;
            c.inter += p && g;
            c.p += p;
            c.g += g;
        }
    return c;
}

// 4-connected labels of a plane; 0 is background.
std::vector<int> label_plane(const BinaryVolume& b, int& count) {
    const int nx = b.dims().x, ny = b.dims().y;
    std::vector<int> lab(static_cast<std::size_t>(nx) * ny, 0);
    std::vector<int> stack;
    count = 0;
    for (int i = 0; i < nx * ny; ++i) {
        if (!b.data()[static_cast<std::size_t>(i)] || lab[static_cast<std::size_t>(i)])
            continue;
        lab[static_cast<std::size_t>(i)] = ++count;
        stack.push_back(i);
        while (!stack.empty()) {
            const int j = stack.back();
            stack.pop_back();
            const int x = j % nx, y = j / nx;
            const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[1] < 0 || n[0] >= nx || n[1] >= ny)
                    continue;
                const auto k = static_cast<std::size_t>(n[1] * nx + n[0]);
                if (b.data()[k] && !lab[k]) {
                    lab[k] = count;
                    stack.push_back(static_cast<int>(k));
                }
            }
        }
    }
    return lab;
}

void require_labels(const std::vector<train::WeakLabel>& labels) {
    if (labels.empty())
        throw ParameterError("evaluation needs at least one labeled slice");
}

}  // namespace

double dice(std::size_t intersection, std::size_t pred, std::size_t truth) {
    if (pred + truth == 0)
        return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(pred + truth);
}

double dice(const BinaryVolume& p, const BinaryVolume& g) {
    if (p.dims() != g.dims())
        throw ShapeError("dice needs equally sized inputs");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool a = p.data()[i] != 0, b = g.data()[i] != 0;
        inter += a && b;
        np += a;
        ng += b;
    }
    return dice(inter, np, ng);
}

double dice_on_labeled_slices(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels) {
    require_labels(labels);
    Counts total;
    for (const auto& wl : labels) {
        check_label(pred, wl);
        const auto c = count_slice(pred, wl);
        total.inter += c.inter;
        total.p += c.p;
        total.g += c.g;
    }
    return dice(total.inter, total.p, total.g);
}

double mean_slice_dice(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels) {
    require_labels(labels);
    double sum = 0;
    for (const auto& wl : labels) {
        check_label(pred, wl);
        const auto c = count_slice(pred, wl);
        sum += dice(c.inter, c.p, c.g);
    }
    return sum / static_cast<double>(labels.size());
}

BinaryVolume slice_of(const BinaryVolume& v, int z) {
    BinaryVolume s({v.dims().x, v.dims().y, 1}, v.spacing());
    for (int y = 0; y < v.dims().y; ++y)
        for (int x = 0; x < v.dims().x; ++x)
            s(x, y, 0) = v(x, y, z);
    return s;
}

int slice_connections(const BinaryVolume& pred, const BinaryVolume& truth) {
    if (pred.dims() != truth.dims() || pred.dims().z != 1)
        throw ShapeError("connection counting needs two equally sized planes");
    int np = 0, nt = 0;
    const auto lp = label_plane(pred, np);
    const auto lt = label_plane(truth, nt);
    std::vector<std::set<int>> touched(static_cast<std::size_t>(np) + 1);
    for (std::size_t i = 0; i < lp.size(); ++i)
        if (lp[i] && lt[i])
            touched[static_cast<std::size_t>(lp[i])].insert(lt[i]);
    int total = 0;
    for (const auto& t : touched)
        if (t.size() >= 2)
            total += static_cast<int>(t.size()) - 1;
    return total;
}

double connection_count(const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels) {
    require_labels(labels);
    int total = 0;
    for (const auto& wl : labels) {
        check_label(pred, wl);
        total += slice_connections(slice_of(pred, wl.z), wl.label);
    }
    return static_cast<double>(total) / static_cast<double>(labels.size());
}

CaseResult evaluate_case(const std::string& id, const BinaryVolume& pred, const std::vector<train::WeakLabel>& labels) {
    require_labels(labels);
    CaseResult r;
    r.id = id;
    for (const auto& wl : labels) {
        check_label(pred, wl);
        const auto c = count_slice(pred, wl);
        r.slices.push_back({wl.z, dice(c.inter, c.p, c.g), slice_connections(slice_of(pred, wl.z), wl.label), c.p, c.g});
    }
    r.dice = dice_on_labeled_slices(pred, labels);
    r.mean_slice_dice = mean_slice_dice(pred, labels);
    r.connections = connection_count(pred, labels);
    return r;
}

EvalReport summarize(std::vector<CaseResult> cases) {
    EvalReport r;
    r.cases = std::move(cases);
    if (!r.cases.empty()) {
        for (const auto& c : r.cases) {
            r.mean_dice += c.dice;
            r.mean_connections += c.connections;
        }
        r.mean_dice /= static_cast<double>(r.cases.size());
        r.mean_connections /= static_cast<double>(r.cases.size());
    }
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : r.cases) {
        nlohmann::json slices = nlohmann::json::array();
        for (const auto& s : c.slices)
            slices.push_back({{"z", s.z},
                              {"dice", s.dice},
                              {"connections", s.connections},
                              {"pred_voxels", s.pred_voxels},
                              {"truth_voxels", s.truth_voxels}});
        cases.push_back({{"id", c.id},
                         {"dice", c.dice},
                         {"mean_slice_dice", c.mean_slice_dice},
                         {"connections", c.connections},
                         {"slices", slices}});
    }
    return {{"cases", cases}, {"mean_dice", r.mean_dice}, {"mean_connections", r.mean_connections}};
}

std::string render_table(const EvalReport& r) {
    std::string head = "                ", dice_row = "Dice            ", conn_row = "Connections     ";
    char buf[64];
    auto cell = [&](std::string& row, const std::string& s) {
        std::snprintf(buf, sizeof buf, "%10s", s.c_str());
        row += buf;
    };
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    for (const auto& c : r.cases) {
        cell(head, c.id.size() > 9 ? c.id.substr(0, 9) : c.id);
        cell(dice_row, num(c.dice));
        cell(conn_row, num(c.connections));
    }
    cell(head, "Mean");
    cell(dice_row, num(r.mean_dice));
    cell(conn_row, num(r.mean_connections));
    return head + "\n" + dice_row + "\n" + conn_row + "\n";
}

}  // namespace stenoviz::eval

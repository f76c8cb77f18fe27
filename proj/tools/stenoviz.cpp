#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stenoviz/eval.hpp"
#include "stenoviz/geodesic.hpp"
#include "stenoviz/infer.hpp"
#include "stenoviz/phantom.hpp"
#include "stenoviz/segment.hpp"
#include "stenoviz/service.hpp"
#include "stenoviz/train.hpp"
#include "stenoviz/volume_io.hpp"
#include "stenoviz/volume_ops.hpp"

using namespace stenoviz;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in)
        throw ParameterError("cannot open " + p.string());
    return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2) << '\n';
}

std::vector<int> parse_ints(const std::string& s, std::size_t n, const char* what) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(std::stoi(item));
    if (out.size() != n)
        throw ParameterError(std::string(what) + " needs " + std::to_string(n) + " comma-separated integers");
    return out;
}

std::string kind_name(const AnyVolume& v) {
    return std::visit(
        [](const auto& x) {
            using T = typename std::decay_t<decltype(x)>::value_type;
            if constexpr (std::is_same_v<T, std::uint8_t>) return "uint8";
            else if constexpr (std::is_same_v<T, std::int16_t>) return "int16";
            else if constexpr (std::is_same_v<T, std::uint16_t>) return "uint16";
            else if constexpr (std::is_same_v<T, std::int32_t>) return "int32";
            else if constexpr (std::is_same_v<T, float>) return "float";
            else return "double";
        },
        v);
}

// Binary volumes stay as they are; anything else is thresholded.
BinaryVolume as_binary(const AnyVolume& any, double t) {
    if (std::holds_alternative<BinaryVolume>(any))
        return std::get<BinaryVolume>(any);
    return segment::threshold(convert_volume<float>(any), t);
}

unet::UNetConfig model_config(const json& j) {
    if (!j.contains("model") || j.at("model") == "desk")
        return unet::UNetConfig::desk();
    if (j.at("model") == "paper")
        return unet::UNetConfig::paper_default();
    return j.at("model").get<unet::UNetConfig>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intestine segmentation and endpoint visualization"};
    app.require_subcommand(1);

    // volume
    auto* vol = app.add_subcommand("volume", "Inspect or resample volumes");
    vol->require_subcommand(1);
    std::string vin, vout;
    double spacing = 0;
    auto* vinfo = vol->add_subcommand("info", "Print geometry as JSON");
    vinfo->add_option("--in", vin, "Input volume")->required();
    auto* vres = vol->add_subcommand("resample", "Resample to isotropic spacing");
    vres->add_option("--in", vin, "Input volume")->required();
    vres->add_option("--out", vout, "Output volume")->required();
    vres->add_option("--spacing", spacing, "Target spacing in mm (default: finest input spacing)");

    // phantom
    auto* ph = app.add_subcommand("phantom", "Synthetic tube phantoms");
    ph->require_subcommand(1);
    std::string ph_spec, ph_out;
    std::uint64_t ph_seed = 1;
    int ph_count = 1, ph_labels = 7;
    auto* phgen = ph->add_subcommand("gen", "Write image.nrrd, truth.nrrd and truth.json");
    phgen->add_option("--spec", ph_spec, "Phantom spec JSON");
    phgen->add_option("--seed", ph_seed, "Random seed");
    phgen->add_option("--out", ph_out, "Output directory")->required();
    auto* phset = ph->add_subcommand("dataset", "Write N phantoms with weak labels and a manifest");
    phset->add_option("--spec", ph_spec, "Phantom spec JSON");
    phset->add_option("--seed", ph_seed, "Seed of the first case");
    phset->add_option("--count", ph_count, "Number of cases")->check(CLI::PositiveNumber);
    phset->add_option("--labels", ph_labels, "Labeled slices per case")->check(CLI::PositiveNumber);
    phset->add_option("--out", ph_out, "Output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train on weakly labeled slices");
    std::string tr_manifest, tr_config, tr_out, tr_resume;
    long tr_iters = -1;
    std::int64_t tr_seed = -1;
    tr->add_option("--manifest", tr_manifest, "Dataset manifest")->required();
    tr->add_option("--config", tr_config, "Training config JSON");
    tr->add_option("--iters", tr_iters, "Iterations (overrides the config)");
    tr->add_option("--seed", tr_seed, "Seed (overrides the config)");
    tr->add_option("--out", tr_out, "Output directory")->required();
    tr->add_option("--resume", tr_resume, "Checkpoint to continue from");

    // infer
    auto* inf = app.add_subcommand("infer", "Probability volume from a checkpoint");
    std::string inf_model, inf_in, inf_out, inf_tile;
    inf->add_option("--model", inf_model, "Checkpoint")->required();
    inf->add_option("--in", inf_in, "Input volume")->required();
    inf->add_option("--out", inf_out, "Output probability volume")->required();
    inf->add_option("--tile", inf_tile, "Tile size X,Y (multiples of 32)");

    // post
    auto* post = app.add_subcommand("post", "Threshold, open and label");
    std::string post_in, post_out, post_table;
    double post_t = 0.5;
    int post_r = 1;
    post->add_option("--in", post_in, "Probability volume")->required();
    post->add_option("--threshold", post_t, "Threshold in (0,1)");
    post->add_option("--open", post_r, "Opening radius in voxels");
    post->add_option("--out", post_out, "Output label volume")->required();
    post->add_option("--table", post_table, "Component table JSON");

    // endpoints
    auto* ep = app.add_subcommand("endpoints", "Endpoints and coloring of the segment under a voxel");
    std::string ep_mask, ep_seed, ep_color, ep_json;
    double ep_snap = 5;
    ep->add_option("--mask", ep_mask, "Binary mask or label volume")->required();
    ep->add_option("--seed", ep_seed, "Voxel x,y,z")->required();
    ep->add_option("--snap", ep_snap, "Snap radius when the seed misses");
    ep->add_option("--color", ep_color, "Output coloring volume");
    ep->add_option("--json", ep_json, "Output summary JSON (default: stdout)");

    // eval
    auto* ev = app.add_subcommand("eval", "Dice and connection count on labeled slices");
    std::string ev_pred, ev_manifest, ev_out;
    double ev_t = 0.5;
    ev->add_option("--pred", ev_pred, "Prediction volume, or a directory of <case id>.nrrd")->required();
    ev->add_option("--manifest", ev_manifest, "Manifest with the labeled slices")->required();
    ev->add_option("--threshold", ev_t, "Threshold for non-binary predictions");
    ev->add_option("--out", ev_out, "Report JSON");

    // serve
    auto* sv = app.add_subcommand("serve", "Run the HTTP service");
    auto scfg = service::ServiceConfig::from_env();
    std::string sv_models = scfg.model_dir.string();
    sv->add_option("--host", scfg.host, "Bind address");
    sv->add_option("--port", scfg.port, "Port");
    sv->add_option("--model-dir", sv_models, "Directory of <model id>.ckpt");
    sv->add_option("--upload-limit", scfg.upload_limit_bytes, "Max upload size in bytes");
    sv->add_option("--snap-radius", scfg.snap_radius, "Click snap radius in voxels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*vinfo) {
            const auto any = read_any_volume(vin);
            std::visit(
                [&](const auto& v) {
                    json j = {{"dims", {v.dims().x, v.dims().y, v.dims().z}},
                              {"spacing", {v.spacing().x, v.spacing().y, v.spacing().z}},
                              {"origin", {v.origin().x, v.origin().y, v.origin().z}},
                              {"element_kind", to_string(v.kind())},
                              {"dtype", kind_name(any)}};
                    if (v.size()) {
                        const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
                        j["min"] = static_cast<double>(*lo);
                        j["max"] = static_cast<double>(*hi);
                    }
                    std::cout << j.dump(2) << '\n';
                },
                any);
        } else if (*vres) {
            const auto v = read_volume<float>(vin);
            const double t = spacing > 0 ? spacing : default_isotropic_spacing(v);
            const auto out = resample_isotropic(v, t);
            write_volume(out, vout);
            std::cerr << "resampled " << v.dims().x << "x" << v.dims().y << "x" << v.dims().z << " -> "
                      << out.dims().x << "x" << out.dims().y << "x" << out.dims().z << " at " << t << " mm\n";
        } else if (*phgen || *phset) {
            phantom::PhantomSpec spec;
            if (!ph_spec.empty())
                spec = read_json(ph_spec).get<phantom::PhantomSpec>();
            if (*phgen) {
                std::mt19937_64 rng(ph_seed);
                phantom::write_phantom(phantom::generate(spec, rng), ph_out);
            } else {
                std::vector<train::TrainCase> cases;
                for (int i = 0; i < ph_count; ++i) {
                    std::mt19937_64 rng(ph_seed + static_cast<std::uint64_t>(i));
                    const std::string id = "case" + std::to_string(i);
                    auto p = phantom::generate(spec, rng);
                    auto labels = phantom::make_weak_labels(p.truth, ph_labels, rng, id);
                    phantom::write_phantom(p, fs::path(ph_out) / (id + "_truth"));
                    cases.push_back({id, std::move(p.image), std::move(labels)});
                }
                train::save_manifest(fs::path(ph_out) / "manifest.json", cases);
            }
        } else if (*tr) {
            json cj = tr_config.empty() ? json::object() : read_json(tr_config);
            auto cfg = cj.get<train::TrainConfig>();
            if (tr_iters >= 0)
                cfg.iterations = tr_iters;
            if (tr_seed >= 0)
                cfg.seed = static_cast<std::uint64_t>(tr_seed);
            cfg.checkpoint_dir = tr_out;
            fs::create_directories(tr_out);
            const auto data = train::load_manifest(tr_manifest);
            std::optional<unet::TrainerState> resume;
            unet::UNet model = [&] {
                if (tr_resume.empty()) {
                    unet::UNet m(model_config(cj));
                    m.initialize(cfg.seed);
                    return m;
                }
                const auto ck = unet::load_checkpoint(tr_resume);
                resume = ck.trainer;
                return unet::model_from_checkpoint(ck);
            }();
            auto log = std::ofstream(fs::path(tr_out) / "loss.csv", resume ? std::ios::app : std::ios::trunc);
            const auto t0 = std::chrono::steady_clock::now();
            const auto r = train::train(model, data, cfg, resume, [&](const train::LossPoint& p) {
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                std::fprintf(stderr, "iter %ld  loss %.5f  mean %.5f  %.0fs\n", p.iteration, p.loss, p.running_mean, s);
                log << p.iteration << ',' << p.loss << ',' << p.running_mean << '\n';
            });
            unet::save_checkpoint(fs::path(tr_out) / "final.ckpt", unet::make_checkpoint(model, r.state));
            write_json(fs::path(tr_out) / "config.json", {{"model", model.config()}, {"train", cfg}});
        } else if (*inf) {
            const infer::UNetModel m(unet::model_from_checkpoint(unet::load_checkpoint(inf_model)));
            infer::InferOptions opt;
            if (!inf_tile.empty()) {
                const auto t = parse_ints(inf_tile, 2, "--tile");
                opt.tile = infer::TileSize{t[0], t[1]};
            }
            opt.progress = [](int done, int total) {
                if (done == total || done % 10 == 0)
                    std::fprintf(stderr, "slice %d/%d\n", done, total);
            };
            write_volume(infer::infer_volume(m, read_volume<float>(inf_in), opt), inf_out);
        } else if (*post) {
            const auto l = segment::postprocess(read_volume<float>(post_in), post_t, post_r);
            write_volume(l.labels, post_out);
            const auto table = segment::component_table(l);
            if (!post_table.empty())
                write_json(post_table, table);
            std::cerr << l.count() << " components\n";
        } else if (*ep) {
            const auto any = read_any_volume(ep_mask);
            const auto s = parse_ints(ep_seed, 3, "--seed");
            const auto labeling = segment::connected_components(as_binary(any, 0.5));
            const auto seg = segment::select_segment(labeling, {s[0], s[1], s[2]}, ep_snap);
            const auto pair = geodesic::find_endpoints(seg.mask, seg.snapped);
            auto j = geodesic::summary(pair);
            j["component_id"] = seg.component_id;
            if (!ep_color.empty())
                write_volume(geodesic::color_segment(seg.mask, pair), ep_color);
            if (ep_json.empty())
                std::cout << j.dump(2) << '\n';
            else
                write_json(ep_json, j);
        } else if (*ev) {
            const auto cases = train::load_manifest(ev_manifest);
            std::vector<eval::CaseResult> results;
            for (const auto& c : cases) {
                fs::path p = ev_pred;
                if (fs::is_directory(p))
                    p /= c.id + ".nrrd";
                else if (cases.size() != 1)
                    throw ParameterError("--pred must be a directory when the manifest has several cases");
                results.push_back(eval::evaluate_case(c.id, as_binary(read_any_volume(p), ev_t), c.labels));
            }
            const auto report = eval::summarize(std::move(results));
            std::cout << eval::render_table(report);
            if (!ev_out.empty())
                write_json(ev_out, eval::to_json(report));
        } else if (*sv) {
            scfg.model_dir = sv_models;
            std::cerr << "listening on " << scfg.host << ":" << scfg.port << "\n";
            return service::serve(scfg);
        }
    } catch (const SelectionMiss& e) {
        std::cerr << "no segment: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

#include "stenoviz/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "stenoviz/volume_io.hpp"

namespace stenoviz::phantom {

namespace {

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

constexpr double kSampleStep = 0.25;

// Uniform Catmull-Rom through the control points, end points duplicated.
std::vector<Vec3> dense_curve(const std::vector<Vec3>& cp) {
    std::vector<Vec3> out;
    const int n = static_cast<int>(cp.size());
    constexpr int per_segment = 400;
    for (int i = 0; i + 1 < n; ++i) {
        const Vec3 p0 = cp[std::max(0, i - 1)], p1 = cp[i], p2 = cp[i + 1], p3 = cp[std::min(n - 1, i + 2)];
        for (int s = 0; s < per_segment; ++s) {
            const double t = static_cast<double>(s) / per_segment, t2 = t * t, t3 = t2 * t;
            out.push_back(0.5 * ((2.0 * p1) + t * (p2 - p0) + t2 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) +
                                 t3 * (3.0 * p1 - p0 - 3.0 * p2 + p3)));
        }
    }
    out.push_back(cp.back());
    return out;
}

// Resample a polyline at a uniform arc step; the last sample sits exactly
// at the far end so the step is adjusted slightly.
std::vector<Vec3> uniform_arc(const std::vector<Vec3>& dense, double& step, double& length) {
    std::vector<double> arc(dense.size(), 0.0);
    for (std::size_t i = 1; i < dense.size(); ++i)
        arc[i] = arc[i - 1] + norm(dense[i] - dense[i - 1]);
    length = arc.back();
    const int n = std::max(1, static_cast<int>(std::round(length / kSampleStep)));
    step = length / n;
    std::vector<Vec3> out;
    std::size_t j = 0;
    for (int k = 0; k <= n; ++k) {
        const double s = k * step;
        while (j + 2 < dense.size() && arc[j + 1] < s)
            ++j;
        const double seg = arc[j + 1] - arc[j];
        const double f = seg > 0 ? std::clamp((s - arc[j]) / seg, 0.0, 1.0) : 0.0;
        out.push_back(dense[j] + f * (dense[j + 1] - dense[j]));
    }
    return out;
}

Vec3 extent_mm(const PhantomSpec& s) {
    return {(s.dims.x - 1) * s.spacing.x, (s.dims.y - 1) * s.spacing.y, (s.dims.z - 1) * s.spacing.z};
}

double max_radius(const PhantomSpec& s) { return std::max(s.radius_start, s.radius_end); }

bool inside_box(Vec3 p, Vec3 lo, Vec3 hi) {
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y && p.z <= hi.z;
}

std::vector<Vec3> random_controls(const PhantomSpec& s, std::mt19937_64& rng) {
    const double m = max_radius(s) + s.margin_mm;
    const Vec3 ext = extent_mm(s);
    const Vec3 lo{m, m, m}, hi{ext.x - m, ext.y - m, ext.z - m};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<Vec3> cp{{lo.x + u(rng) * (hi.x - lo.x), lo.y + u(rng) * (hi.y - lo.y), lo.z + u(rng) * (hi.z - lo.z)}};
    Vec3 dir = normalized({gauss(rng), gauss(rng), 0.5 * gauss(rng)});
    const double max_turn = s.max_turn_deg * std::numbers::pi / 180.0;
    for (int i = 1; i < s.random_control_points; ++i) {
        // Turn by a random angle about a random axis perpendicular to dir.
        Vec3 axis = cross(dir, {gauss(rng), gauss(rng), gauss(rng)});
        if (norm(axis) < 1e-9)
            axis = cross(dir, {0, 0, 1});
        axis = normalized(axis);
        const double a = u(rng) * max_turn;
        const Vec3 perp = cross(axis, dir);
        dir = normalized(std::cos(a) * dir + std::sin(a) * perp);
        Vec3 next = cp.back() + s.step_mm * dir;
        // Bounce off the walls of the allowed box.
        if (next.x < lo.x || next.x > hi.x) dir.x = -dir.x;
        if (next.y < lo.y || next.y > hi.y) dir.y = -dir.y;
        if (next.z < lo.z || next.z > hi.z) dir.z = -dir.z;
        next = cp.back() + s.step_mm * dir;
        next = {std::clamp(next.x, lo.x, hi.x), std::clamp(next.y, lo.y, hi.y), std::clamp(next.z, lo.z, hi.z)};
        cp.push_back(next);
    }
    return cp;
}

double radius_at(const PhantomSpec& s, double arc, double length) {
    const double f = length > 0 ? arc / length : 0.0;
    return s.radius_start + (s.radius_end - s.radius_start) * f;
}

// Empty string when the sampled path is acceptable.
std::string path_problem(const PhantomSpec& s, const std::vector<Vec3>& c, double step, double length) {
    const Vec3 ext = extent_mm(s);
    for (std::size_t k = 0; k < c.size(); ++k) {
        const double m = radius_at(s, k * step, length) + s.margin_mm;
        if (!inside_box(c[k], {m, m, m}, {ext.x - m, ext.y - m, ext.z - m}))
            return "centerline comes closer than radius + margin to the volume boundary";
    }
    // A centerline bending tighter than the tube radius folds the tube over
    // itself. Turning angle over a short arc window estimates the bend.
    const std::size_t w = std::max<std::size_t>(2, static_cast<std::size_t>(std::round(1.0 / step)));
    for (std::size_t k = w; k + w < c.size(); ++k) {
        const Vec3 t0 = c[k] - c[k - w], t1 = c[k + w] - c[k];
        const double n0 = norm(t0), n1 = norm(t1);
        if (n0 <= 0 || n1 <= 0)
            continue;
        const double angle = std::acos(std::clamp(dot(t0, t1) / (n0 * n1), -1.0, 1.0));
        if (angle > 0 && (n0 + n1) / 2 / angle < radius_at(s, k * step, length))
            return "centerline bends tighter than the tube radius";
    }
    const double clearance = 2.0 * std::max({s.spacing.x, s.spacing.y, s.spacing.z});
    const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(1.0 / step));
    for (std::size_t i = 0; i < c.size(); i += stride)
        for (std::size_t j = i + 1; j < c.size(); j += stride) {
            const double ri = radius_at(s, i * step, length), rj = radius_at(s, j * step, length);
            const double need = ri + rj + clearance;
            // Points this far apart along the path must also be apart in space.
            if ((j - i) * step > std::numbers::pi * need && norm(c[i] - c[j]) < need)
                return "centerline comes back too close to itself";
        }
    return {};
}

Phantom rasterize(const PhantomSpec& s, const std::vector<Vec3>& c, double step, double length,
                  const std::vector<std::pair<double, double>>& gaps, std::mt19937_64& rng) {
    Phantom p{ImageVolume(s.dims, s.spacing, {}, static_cast<float>(s.background)),
              BinaryVolume(s.dims, s.spacing, {}, 0), {}};
    p.meta.gaps = gaps;
    p.truth.set_kind(ElementKind::Binary);
    const auto n = p.truth.size();
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> nearest(n, -1);
    const double rmax = max_radius(s) + 1.0;
    const auto& sp = s.spacing;
    for (std::size_t k = 0; k < c.size(); ++k) {
        const int x0 = std::max(0, static_cast<int>(std::floor((c[k].x - rmax) / sp.x)));
        const int x1 = std::min(s.dims.x - 1, static_cast<int>(std::ceil((c[k].x + rmax) / sp.x)));
        const int y0 = std::max(0, static_cast<int>(std::floor((c[k].y - rmax) / sp.y)));
        const int y1 = std::min(s.dims.y - 1, static_cast<int>(std::ceil((c[k].y + rmax) / sp.y)));
        const int z0 = std::max(0, static_cast<int>(std::floor((c[k].z - rmax) / sp.z)));
        const int z1 = std::min(s.dims.z - 1, static_cast<int>(std::ceil((c[k].z + rmax) / sp.z)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const Vec3 v{x * sp.x, y * sp.y, z * sp.z};
                    const Vec3 d = v - c[k];
                    const double d2 = dot(d, d);
                    const auto i = p.truth.index(x, y, z);
                    if (d2 < best[i]) {
                        best[i] = d2;
                        nearest[i] = static_cast<int>(k);
                    }
                }
    }

    auto tangent = [&](std::size_t k) {
        const std::size_t a = k == 0 ? 0 : k - 1, b = std::min(c.size() - 1, k + 1);
        return normalized(c[b] - c[a]);
    };
    const Vec3 t_first = tangent(0), t_last = tangent(c.size() - 1);

    std::normal_distribution<double> noise(0.0, s.noise_sigma > 0 ? s.noise_sigma : 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int k = nearest[i];
        if (k < 0)
            continue;
        const double arc = k * step;
        const double r = radius_at(s, arc, length);
        if (best[i] > r * r)
            continue;
        const auto vi = p.truth.voxel(i);
        const Vec3 v{vi.x * sp.x, vi.y * sp.y, vi.z * sp.z};
        // Flat caps: nothing beyond the plane through each path end.
        if (k == 0 && dot(v - c.front(), t_first) < -0.5 * step)
            continue;
        if (static_cast<std::size_t>(k) == c.size() - 1 && dot(v - c.back(), t_last) > 0.5 * step)
            continue;
        bool in_gap = false;
        for (const auto& [a, b] : p.meta.gaps)
            in_gap = in_gap || (arc >= a && arc <= b);
        if (in_gap)
            continue;
        p.truth.data()[i] = 1;
        const double inner = r - s.wall_thickness;
        p.image.data()[i] = static_cast<float>(inner > 0 && best[i] <= inner * inner ? s.lumen : s.wall);
    }
    if (s.noise_sigma > 0)
        for (float& v : p.image.data())
            v = static_cast<float>(v + noise(rng));
    return p;
}

Vec3 point_at_arc(const std::vector<Vec3>& c, double step, double arc) {
    const double u = std::clamp(arc / step, 0.0, static_cast<double>(c.size() - 1));
    const auto k = std::min(static_cast<std::size_t>(u), c.size() - 2);
    const double f = u - static_cast<double>(k);
    return c[k] + f * (c[k + 1] - c[k]);
}

}  // namespace

void PhantomSpec::validate() const {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1)
        throw SpecError("phantom dims must be >= 1");
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
        throw SpecError("phantom spacing must be positive");
    if (!(radius_start > 0 && radius_end > 0))
        throw SpecError("tube radii must be positive");
    if (wall_thickness < 0 || margin_mm < 0 || noise_sigma < 0)
        throw SpecError("wall thickness, margin and noise must be non-negative");
    if (control_points.size() == 1 || (control_points.empty() && random_control_points < 2))
        throw SpecError("a centerline needs at least two control points");
    if (control_points.empty() && !(step_mm > 0))
        throw SpecError("step_mm must be positive");
    for (const auto& st : stenoses) {
        if (!(st.gap_mm >= 0))
            throw SpecError("stenosis gap length must be >= 0");
        if (!(st.arc_fraction > 0 && st.arc_fraction < 1))
            throw SpecError("stenosis position must lie strictly inside the path");
    }
    if (max_attempts < 1)
        throw SpecError("max_attempts must be >= 1");
}

Phantom generate(const PhantomSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const bool random_path = spec.control_points.empty();
    std::string problem;
    for (int attempt = 1; attempt <= (random_path ? spec.max_attempts : 1); ++attempt) {
        const auto cp = random_path ? random_controls(spec, rng) : spec.control_points;
        double step = 0, length = 0;
        const auto c = uniform_arc(dense_curve(cp), step, length);
        problem = path_problem(spec, c, step, length);
        if (!problem.empty())
            continue;

        std::vector<std::pair<double, double>> gaps;
        for (const auto& st : spec.stenoses) {
            const double mid = st.arc_fraction * length;
            gaps.push_back({mid - st.gap_mm / 2, mid + st.gap_mm / 2});
        }
        std::sort(gaps.begin(), gaps.end());
        for (std::size_t i = 0; i < gaps.size(); ++i) {
            if (gaps[i].first <= 0 || gaps[i].second >= length || (i > 0 && gaps[i].first <= gaps[i - 1].second))
                throw SpecError("stenosis gaps overlap each other or the path ends");
        }

        Phantom p = rasterize(spec, c, step, length, gaps, rng);
        p.meta.centerline_length_mm = length;
        p.meta.centerline = c;
        p.meta.sample_step_mm = step;
        p.meta.attempts = attempt;
        double from = 0.0;
        auto add_piece = [&](double a, double b) {
            p.meta.pieces.push_back({a, b, b - a, point_at_arc(c, step, a), point_at_arc(c, step, b)});
        };
        for (const auto& [a, b] : gaps) {
            add_piece(from, a);
            from = b;
        }
        add_piece(from, length);
        return p;
    }
    throw SpecError(problem);
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3)
        throw SpecError("expected a 3-element array, got " + j.dump());
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = {{"dims", {s.dims.x, s.dims.y, s.dims.z}},
         {"spacing", vec_json(s.spacing)},
         {"random_control_points", s.random_control_points},
         {"step_mm", s.step_mm},
         {"max_turn_deg", s.max_turn_deg},
         {"radius_start", s.radius_start},
         {"radius_end", s.radius_end},
         {"wall_thickness", s.wall_thickness},
         {"margin_mm", s.margin_mm},
         {"background", s.background},
         {"wall", s.wall},
         {"lumen", s.lumen},
         {"noise_sigma", s.noise_sigma},
         {"max_attempts", s.max_attempts}};
    j["control_points"] = nlohmann::json::array();
    for (const auto& c : s.control_points)
        j["control_points"].push_back(vec_json(c));
    j["stenoses"] = nlohmann::json::array();
    for (const auto& st : s.stenoses)
        j["stenoses"].push_back({{"arc_fraction", st.arc_fraction}, {"gap_mm", st.gap_mm}});
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    try {
        s = PhantomSpec{};
        if (j.contains("dims")) {
            const auto& d = j.at("dims");
            s.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        }
        if (j.contains("spacing"))
            s.spacing = vec_from(j.at("spacing"));
        if (j.contains("radius")) {
            s.radius_start = s.radius_end = j.at("radius").get<double>();
        }
        s.random_control_points = j.value("random_control_points", s.random_control_points);
        s.step_mm = j.value("step_mm", s.step_mm);
        s.max_turn_deg = j.value("max_turn_deg", s.max_turn_deg);
        s.radius_start = j.value("radius_start", s.radius_start);
        s.radius_end = j.value("radius_end", s.radius_end);
        s.wall_thickness = j.value("wall_thickness", s.wall_thickness);
        s.margin_mm = j.value("margin_mm", s.margin_mm);
        s.background = j.value("background", s.background);
        s.wall = j.value("wall", s.wall);
        s.lumen = j.value("lumen", s.lumen);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.max_attempts = j.value("max_attempts", s.max_attempts);
        for (const auto& c : j.value("control_points", nlohmann::json::array()))
            s.control_points.push_back(vec_from(c));
        for (const auto& st : j.value("stenoses", nlohmann::json::array()))
            s.stenoses.push_back({st.at("arc_fraction").get<double>(), st.at("gap_mm").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("phantom spec: ") + e.what());
    }
}

void to_json(nlohmann::json& j, const PhantomTruth& t) {
    j = {{"centerline_length_mm", t.centerline_length_mm}, {"sample_step_mm", t.sample_step_mm},
         {"attempts", t.attempts}};
    j["pieces"] = nlohmann::json::array();
    for (const auto& p : t.pieces)
        j["pieces"].push_back({{"arc_start_mm", p.arc_start_mm},
                               {"arc_end_mm", p.arc_end_mm},
                               {"length_mm", p.length_mm},
                               {"end_a_mm", vec_json(p.end_a_mm)},
                               {"end_b_mm", vec_json(p.end_b_mm)}});
    j["gaps"] = nlohmann::json::array();
    for (const auto& [a, b] : t.gaps)
        j["gaps"].push_back({a, b});
    j["centerline"] = nlohmann::json::array();
    for (const auto& c : t.centerline)
        j["centerline"].push_back(vec_json(c));
}

std::vector<train::WeakLabel> make_weak_labels(const BinaryVolume& truth, int n_slices, std::mt19937_64& rng,
                                               const std::string& case_id) {
    const auto d = truth.dims();
    std::vector<int> bearing;
    for (int z = 0; z < d.z; ++z) {
        const auto begin = truth.data().begin() + static_cast<std::ptrdiff_t>(truth.index(0, 0, z));
        if (std::any_of(begin, begin + static_cast<std::ptrdiff_t>(d.x) * d.y, [](auto v) { return v != 0; }))
            bearing.push_back(z);
    }
    if (bearing.empty())
        throw SpecError("cannot draw weak labels from an empty mask");
    if (n_slices < 1 || n_slices > static_cast<int>(bearing.size()))
        throw ParameterError("asked for " + std::to_string(n_slices) + " labeled slices but only " +
                             std::to_string(bearing.size()) + " slices intersect the mask");
    std::vector<int> chosen;
    std::sample(bearing.begin(), bearing.end(), std::back_inserter(chosen), n_slices, rng);
    std::vector<train::WeakLabel> out;
    for (int z : chosen) {
        train::WeakLabel wl{case_id, z, BinaryVolume({d.x, d.y, 1}, truth.spacing(), truth.origin(), 0)};
        wl.label.set_origin({truth.origin().x, truth.origin().y, truth.origin().z + z * truth.spacing().z});
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                wl.label(x, y, 0) = truth(x, y, z) ? 1 : 0;
        out.push_back(std::move(wl));
    }
    return out;
}

VoxelIndex nearest_voxel(const Vec3& mm, const Vec3& spacing, const Vec3& origin) {
    return {static_cast<int>(std::lround((mm.x - origin.x) / spacing.x)),
            static_cast<int>(std::lround((mm.y - origin.y) / spacing.y)),
            static_cast<int>(std::lround((mm.z - origin.z) / spacing.z))};
}

void write_phantom(const Phantom& p, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_volume(p.image, dir / "image.nrrd");
    write_volume(p.truth, dir / "truth.nrrd");
    std::ofstream(dir / "truth.json") << nlohmann::json(p.meta).dump(2) << '\n';
}

}  // namespace stenoviz::phantom

#include "odpg/datasynth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "odpg/datasynth_detail.hpp"
#include "odpg/image.hpp"

namespace odpg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSize = 64;
constexpr double kDeg = M_PI / 180.0;

struct Pt {
    double x = 0, y = 0;
};

Pt joint(const PoseKeypoints& kps, int id) {
    return {kps[static_cast<std::size_t>(id)].x, kps[static_cast<std::size_t>(id)].y};
}

double dist(const Pt& a, const Pt& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// limb bones validated against the canonical skeleton
const std::array<std::pair<int, int>, 8> kBones = {{{kLeftShoulder, kLeftElbow},
                                                    {kLeftElbow, kLeftWrist},
                                                    {kRightShoulder, kRightElbow},
                                                    {kRightElbow, kRightWrist},
                                                    {kLeftHip, kLeftKnee},
                                                    {kLeftKnee, kLeftAnkle},
                                                    {kRightHip, kRightKnee},
                                                    {kRightKnee, kRightAnkle}}};

void set_px(Tensor& img, int x, int y, const Rgb& c) {
    if (x < 0 || x >= kSize || y < 0 || y >= kSize) return;
    const int hw = kSize * kSize;
    for (int ch = 0; ch < 3; ++ch) {
        img.data()[ch * hw + y * kSize + x] =
            static_cast<float>(c[static_cast<std::size_t>(ch)] / 255.0 * 2.0 - 1.0);
    }
}

void draw_disc(Tensor& img, double cx, double cy, double r, const Rgb& c) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(kSize - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(kSize - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) set_px(img, x, y, c);
        }
    }
}

void draw_capsule(Tensor& img, const Pt& a, const Pt& b, double halfw, const Rgb& c) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - halfw)));
    const int x1 = std::min(kSize - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + halfw)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - halfw)));
    const int y1 = std::min(kSize - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + halfw)));
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double dx = x - (a.x + t * vx), dy = y - (a.y + t * vy);
            if (dx * dx + dy * dy <= halfw * halfw) set_px(img, x, y, c);
        }
    }
}

double cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool in_triangle(const Pt& p, const Pt& a, const Pt& b, const Pt& c) {
    const double d1 = cross(p, a, b), d2 = cross(p, b, c), d3 = cross(p, c, a);
    const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    return !(has_neg && has_pos);
}

std::array<Pt, 4> torso_quad(const PoseSpec& pose) {
    return {joint(pose.joints, kLeftShoulder), joint(pose.joints, kRightShoulder),
            joint(pose.joints, kRightHip), joint(pose.joints, kLeftHip)};
}

Rgb background() { return {206, 206, 210}; }

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c, g = x;
    } else if (hp < 2) {
        r = x, g = c;
    } else if (hp < 3) {
        g = c, b = x;
    } else if (hp < 4) {
        g = x, b = c;
    } else if (hp < 5) {
        r = x, b = c;
    } else {
        r = c, b = x;
    }
    const double m = v - c;
    auto q = [&](double t) { return static_cast<int>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

json rgb_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }

Rgb rgb_from_json(const json& j) {
    return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

json pose_to_json(const PoseSpec& p) {
    json arr = json::array();
    for (const auto& kp : p.joints) {
        arr.push_back(json::array({kp.x, kp.y, kp.visible ? 1 : 0}));
    }
    return arr;
}

PoseSpec pose_from_json(const json& arr) {
    if (!arr.is_array() || arr.size() != kNumJoints) {
        throw IntegrityError("pose json: expected " + std::to_string(int(kNumJoints)) +
                             " keypoints");
    }
    PoseSpec p;
    for (int j = 0; j < kNumJoints; ++j) {
        const auto& kp = arr.at(static_cast<std::size_t>(j));
        p.joints[static_cast<std::size_t>(j)] = {kp.at(0).get<float>(), kp.at(1).get<float>(),
                                                 kp.at(2).get<int>() != 0};
    }
    return p;
}

std::string id_name(int id, const char* suffix) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d_%s", id, suffix);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace

std::string pattern_name(GarmentSpec::Pattern p) {
    switch (p) {
        case GarmentSpec::Pattern::kSolid: return "solid";
        case GarmentSpec::Pattern::kStripes: return "stripes";
        case GarmentSpec::Pattern::kChecker: return "checker";
    }
    return "solid";
}

GarmentSpec::Pattern pattern_from_name(const std::string& name) {
    if (name == "solid") return GarmentSpec::Pattern::kSolid;
    if (name == "stripes") return GarmentSpec::Pattern::kStripes;
    if (name == "checker") return GarmentSpec::Pattern::kChecker;
    throw ValidationError("unknown garment pattern: " + name);
}

const PoseKeypoints& canonical_skeleton() {
    static const PoseKeypoints canon = [] {
        PoseKeypoints k{};
        auto set = [&](int id, float x, float y) { k[static_cast<std::size_t>(id)] = {x, y, true}; };
        set(kHead, 32, 11);
        set(kLeftShoulder, 25, 22);
        set(kRightShoulder, 39, 22);
        set(kLeftElbow, 23, 30);
        set(kRightElbow, 41, 30);
        set(kLeftWrist, 22, 38);
        set(kRightWrist, 42, 38);
        set(kLeftHip, 27, 38);
        set(kRightHip, 37, 38);
        set(kLeftKnee, 26, 48);
        set(kRightKnee, 38, 48);
        set(kLeftAnkle, 26, 58);
        set(kRightAnkle, 38, 58);
        return k;
    }();
    return canon;
}

void validate_pose(const PoseSpec& pose) {
    const auto& canon = canonical_skeleton();
    for (const auto& kp : pose.joints) {
        if (kp.visible && (kp.x < 0 || kp.x >= kSize || kp.y < 0 || kp.y >= kSize)) {
            throw ValidationError("pose: visible joint outside the 64x64 frame");
        }
    }
    for (const auto& [a, b] : kBones) {
        const double want = dist(joint(canon, a), joint(canon, b));
        const double got = dist(joint(pose.joints, a), joint(pose.joints, b));
        if (got < 0.75 * want || got > 1.25 * want) {
            throw ValidationError("pose: bone " + std::to_string(a) + "-" + std::to_string(b) +
                                  " length " + std::to_string(got) + " outside 25% of canonical " +
                                  std::to_string(want));
        }
    }
}

std::vector<std::uint8_t> torso_mask(const PoseSpec& pose, int size) {
    const auto q = torso_quad(pose);
    // degenerate quad: shoulders and hips must span an area
    const double area =
        std::abs(cross(q[0], q[1], q[2])) / 2.0 + std::abs(cross(q[0], q[2], q[3])) / 2.0;
    if (area < 8.0) throw ValidationError("torso quad is degenerate");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const Pt p{static_cast<double>(x), static_cast<double>(y)};
            if (in_triangle(p, q[0], q[1], q[2]) || in_triangle(p, q[0], q[2], q[3])) {
                mask[static_cast<std::size_t>(y) * size + x] = 1;
            }
        }
    }
    return mask;
}

Rgb garment_color_at(const GarmentSpec& g, int x, int y) {
    switch (g.pattern) {
        case GarmentSpec::Pattern::kSolid:
            return g.base;
        case GarmentSpec::Pattern::kStripes:
            return ((y / g.stripe_px) % 2 == 0) ? g.base : g.pattern_color;
        case GarmentSpec::Pattern::kChecker:
            return (((x / g.stripe_px) + (y / g.stripe_px)) % 2 == 0) ? g.base : g.pattern_color;
    }
    return g.base;
}

namespace {

void validate_garment(const GarmentSpec& g) {
    if (g.stripe_px < 1 || g.stripe_px > 32) {
        throw ValidationError("garment: stripe width must lie in [1,32] px");
    }
    for (int c : g.base) {
        if (c < 0 || c > 255) throw ValidationError("garment: base color out of range");
    }
    for (int c : g.pattern_color) {
        if (c < 0 || c > 255) throw ValidationError("garment: pattern color out of range");
    }
}

void validate_person(const PersonSpec& p) {
    auto check_rgb = [](const Rgb& c) {
        for (int v : c) {
            if (v < 0 || v > 255) throw ValidationError("person: color out of range");
        }
    };
    check_rgb(p.skin);
    check_rgb(p.hair);
    check_rgb(p.trouser);
    if (p.shoulder_scale < 0.8f || p.shoulder_scale > 1.2f || p.limb_scale < 0.8f ||
        p.limb_scale > 1.2f) {
        throw ValidationError("person: proportions outside +-20% of canonical");
    }
}

}  // namespace

Tensor render_person(const PersonSpec& person, const GarmentSpec& garment, const PoseSpec& pose) {
    validate_person(person);
    validate_garment(garment);
    validate_pose(pose);

    Tensor img({3, kSize, kSize});
    const Rgb bg = background();
    for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) set_px(img, x, y, bg);

    const auto& j = pose.joints;
    // legs and arms first; the torso quad covers their roots so the
    // garment region stays pure pattern (the torso statistics oracle
    // depends on this)
    draw_capsule(img, joint(j, kLeftHip), joint(j, kLeftKnee), 1.7, person.trouser);
    draw_capsule(img, joint(j, kLeftKnee), joint(j, kLeftAnkle), 1.6, person.trouser);
    draw_capsule(img, joint(j, kRightHip), joint(j, kRightKnee), 1.7, person.trouser);
    draw_capsule(img, joint(j, kRightKnee), joint(j, kRightAnkle), 1.6, person.trouser);
    draw_capsule(img, joint(j, kLeftShoulder), joint(j, kLeftElbow), 1.4, person.skin);
    draw_capsule(img, joint(j, kLeftElbow), joint(j, kLeftWrist), 1.3, person.skin);
    draw_capsule(img, joint(j, kRightShoulder), joint(j, kRightElbow), 1.4, person.skin);
    draw_capsule(img, joint(j, kRightElbow), joint(j, kRightWrist), 1.3, person.skin);
    // torso quad filled with the garment pattern
    const auto mask = torso_mask(pose);
    for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
            if (mask[static_cast<std::size_t>(y) * kSize + x]) {
                set_px(img, x, y, garment_color_at(garment, x, y));
            }
        }
    }
    // head with hair cap
    const Pt head = joint(j, kHead);
    draw_disc(img, head.x, head.y - 1.2, 4.8, person.hair);
    draw_disc(img, head.x, head.y + 0.8, 4.0, person.skin);
    return img;
}

std::vector<std::uint8_t> flat_garment_mask(int size) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
    auto fill = [&](int x0, int x1, int y0, int y1) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) mask[static_cast<std::size_t>(y) * size + x] = 1;
    };
    fill(20, 43, 18, 45);  // body panel
    fill(13, 19, 18, 29);  // left sleeve
    fill(44, 50, 18, 29);  // right sleeve
    return mask;
}

Tensor render_garment_flat(const GarmentSpec& garment) {
    validate_garment(garment);
    Tensor img({3, kSize, kSize});
    const Rgb bg = background();
    const auto mask = flat_garment_mask();
    for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
            set_px(img, x, y,
                   mask[static_cast<std::size_t>(y) * kSize + x] ? garment_color_at(garment, x, y)
                                                                 : bg);
        }
    }
    return img;
}

Tensor apply_gray_mask(const Tensor& image, const PoseSpec& pose) {
    if (image.dim() != 3 || image.size(0) != 3 || image.size(1) != kSize ||
        image.size(2) != kSize) {
        throw DimensionError("apply_gray_mask: expected [3,64,64]");
    }
    auto out = image.clone();
    const auto mask = torso_mask(pose);
    for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
            if (mask[static_cast<std::size_t>(y) * kSize + x]) {
                set_px(out, x, y, {128, 128, 128});
            }
        }
    }
    return out;
}

PersonSpec sample_person(Rng& rng) {
    PersonSpec p;
    const double tone = rng.uniform();
    auto lerp = [&](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * tone)); };
    p.skin = {lerp(247, 96), lerp(220, 62), lerp(198, 40)};
    static const std::array<Rgb, 5> hair_set = {
        {{25, 20, 20}, {80, 50, 30}, {200, 170, 90}, {150, 60, 30}, {140, 140, 140}}};
    auto hair = hair_set[static_cast<std::size_t>(rng.uniform_int(0, 4))];
    for (auto& c : hair) c = std::clamp(c + static_cast<int>(rng.uniform_int(-10, 10)), 0, 255);
    p.hair = hair;
    p.trouser = hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.3, 0.8), rng.uniform(0.25, 0.7));
    p.shoulder_scale = static_cast<float>(rng.uniform(0.85, 1.15));
    p.limb_scale = static_cast<float>(rng.uniform(0.88, 1.12));
    return p;
}

GarmentSpec sample_garment(Rng& rng, bool heldout, double w_solid, double w_stripes,
                           double w_checker) {
    GarmentSpec g;
    double h;
    if (heldout) {
        h = rng.uniform(205.0, 225.0);
    } else {
        // regular palette excludes the held-out hue band [200, 230)
        const double u = rng.uniform(0.0, 330.0);
        h = u < 200.0 ? u : u + 30.0;
    }
    g.base = hsv_to_rgb(h, rng.uniform(0.55, 0.95), rng.uniform(0.6, 0.95));
    const double total = w_solid + w_stripes + w_checker;
    if (total <= 0) throw ValidationError("garment sampling: pattern weights must sum > 0");
    const double u = rng.uniform(0.0, total);
    if (u < w_solid) {
        g.pattern = GarmentSpec::Pattern::kSolid;
    } else if (u < w_solid + w_stripes) {
        g.pattern = GarmentSpec::Pattern::kStripes;
    } else {
        g.pattern = GarmentSpec::Pattern::kChecker;
    }
    g.stripe_px = static_cast<int>(rng.uniform_int(3, 5));
    for (int c = 0; c < 3; ++c) {
        g.pattern_color[static_cast<std::size_t>(c)] = static_cast<int>(
            std::lround(g.base[static_cast<std::size_t>(c)] * 0.65));
    }
    return g;
}

PoseSpec sample_pose(Rng& rng, const PersonSpec& person) {
    const double cx = 32.0 + rng.uniform(-4.0, 4.0);
    const double cy = 30.0 + rng.uniform(-2.0, 0.0);
    const double s = person.shoulder_scale;
    const double ls = person.limb_scale;

    PoseSpec pose;
    auto set = [&](int id, double x, double y) {
        pose.joints[static_cast<std::size_t>(id)] = {static_cast<float>(x),
                                                     static_cast<float>(y), true};
    };
    const Pt lsho{cx - 7.0 * s, cy - 8.0};
    const Pt rsho{cx + 7.0 * s, cy - 8.0};
    const Pt lhip{cx - 5.0 * s, cy + 8.0};
    const Pt rhip{cx + 5.0 * s, cy + 8.0};
    set(kLeftShoulder, lsho.x, lsho.y);
    set(kRightShoulder, rsho.x, rsho.y);
    set(kLeftHip, lhip.x, lhip.y);
    set(kRightHip, rhip.x, rhip.y);

    auto chain = [&](const Pt& root, double sign, double len1, double len2, double a1, double a2,
                     int id1, int id2) {
        const Pt mid{root.x + sign * len1 * std::sin(a1), root.y + len1 * std::cos(a1)};
        const Pt end{mid.x + sign * len2 * std::sin(a1 + a2), mid.y + len2 * std::cos(a1 + a2)};
        set(id1, mid.x, mid.y);
        set(id2, end.x, end.y);
    };

    const double ua = 8.246, fa = 8.062, th = 10.050, sh = 10.0;
    // draw order is fixed: left arm, right arm, left leg, right leg, head
    chain(lsho, -1.0, ua * ls * rng.uniform(0.94, 1.06), fa * ls * rng.uniform(0.94, 1.06),
          rng.uniform(-10.0, 55.0) * kDeg, rng.uniform(-15.0, 65.0) * kDeg, kLeftElbow,
          kLeftWrist);
    chain(rsho, 1.0, ua * ls * rng.uniform(0.94, 1.06), fa * ls * rng.uniform(0.94, 1.06),
          rng.uniform(-10.0, 55.0) * kDeg, rng.uniform(-15.0, 65.0) * kDeg, kRightElbow,
          kRightWrist);
    chain(lhip, -1.0, th * ls * rng.uniform(0.94, 1.06), sh * ls * rng.uniform(0.94, 1.06),
          rng.uniform(-15.0, 15.0) * kDeg, rng.uniform(-8.0, 20.0) * kDeg, kLeftKnee, kLeftAnkle);
    chain(rhip, 1.0, th * ls * rng.uniform(0.94, 1.06), sh * ls * rng.uniform(0.94, 1.06),
          rng.uniform(-15.0, 15.0) * kDeg, rng.uniform(-8.0, 20.0) * kDeg, kRightKnee,
          kRightAnkle);

    const Pt neck{(lsho.x + rsho.x) / 2.0, (lsho.y + rsho.y) / 2.0};
    const double hd = 11.0 * rng.uniform(0.95, 1.05);
    const double ha = rng.uniform(-8.0, 8.0) * kDeg;
    set(kHead, neck.x + hd * std::sin(ha), neck.y - hd * std::cos(ha));

    validate_pose(pose);
    return pose;
}

std::vector<int> Manifest::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (const auto& e : entries) {
        if (split == "all" || e.split == split) out.push_back(e.id);
    }
    return out;
}

namespace {

json person_json(const PersonSpec& p) {
    return json{{"skin", rgb_json(p.skin)},
                {"hair", rgb_json(p.hair)},
                {"trouser", rgb_json(p.trouser)},
                {"shoulder_scale", p.shoulder_scale},
                {"limb_scale", p.limb_scale}};
}

PersonSpec person_from_json(const json& j) {
    PersonSpec p;
    p.skin = rgb_from_json(j.at("skin"));
    p.hair = rgb_from_json(j.at("hair"));
    p.trouser = rgb_from_json(j.at("trouser"));
    p.shoulder_scale = j.at("shoulder_scale").get<float>();
    p.limb_scale = j.at("limb_scale").get<float>();
    return p;
}

json garment_json(const GarmentSpec& g) {
    return json{{"base", rgb_json(g.base)},
                {"pattern", pattern_name(g.pattern)},
                {"pattern_color", rgb_json(g.pattern_color)},
                {"stripe_px", g.stripe_px}};
}

GarmentSpec garment_from_json(const json& j) {
    GarmentSpec g;
    g.base = rgb_from_json(j.at("base"));
    g.pattern = pattern_from_name(j.at("pattern").get<std::string>());
    g.pattern_color = rgb_from_json(j.at("pattern_color"));
    g.stripe_px = j.at("stripe_px").get<int>();
    return g;
}

std::string split_for(std::uint64_t seed, int person_id) {
    const auto h = Rng::mix(seed ^ 0x51d117a11ef00dull, static_cast<std::uint64_t>(person_id));
    const int bucket = static_cast<int>(h % 100);
    if (bucket < 80) return "train";
    if (bucket < 90) return "val";
    return "test";
}

}  // namespace

Manifest generate_dataset(const DatasetOptions& opts) {
    if (opts.n < 1) throw ValidationError("gen-data: n must be >= 1");
    if (opts.out_dir.empty()) throw ValidationError("gen-data: out_dir required");
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    if (ec) throw IoError("gen-data: cannot create " + opts.out_dir + ": " + ec.message());

    Manifest man;
    man.version = 1;
    man.n = opts.n;
    man.seed = opts.seed;
    man.root = opts.out_dir;

    for (int i = 0; i < opts.n; ++i) {
        Rng rng(Rng::mix(opts.seed, static_cast<std::uint64_t>(i)));
        const auto person = sample_person(rng);
        const auto garment =
            sample_garment(rng, opts.heldout_garments, opts.w_solid, opts.w_stripes,
                           opts.w_checker);
        const auto pose_a = sample_pose(rng, person);
        PoseSpec pose_b = sample_pose(rng, person);
        for (int attempt = 0; attempt < 16; ++attempt) {
            double mean_disp = 0;
            for (int jn = 0; jn < kNumJoints; ++jn) {
                mean_disp += dist(joint(pose_a.joints, jn), joint(pose_b.joints, jn));
            }
            mean_disp /= kNumJoints;
            if (mean_disp >= 3.0) break;
            pose_b = sample_pose(rng, person);
        }

        const auto source = render_person(person, garment, pose_a);
        const auto target = render_person(person, garment, pose_b);
        const auto flat = render_garment_flat(garment);

        ManifestEntry e;
        e.id = i;
        e.person_id = i;  // one identity per triplet
        e.split = split_for(opts.seed, e.person_id);
        e.person = person;
        e.garment = garment;
        e.source_png = id_name(i, "source.png");
        e.garment_png = id_name(i, "garment.png");
        e.target_png = id_name(i, "target.png");
        e.pose_json = id_name(i, "pose.json");

        const auto dir = fs::path(opts.out_dir);
        write_png((dir / e.source_png).string(), tensor_to_u8(source));
        write_png((dir / e.garment_png).string(), tensor_to_u8(flat));
        write_png((dir / e.target_png).string(), tensor_to_u8(target));
        const json pose_doc = {{"source", pose_to_json(pose_a)},
                               {"target", pose_to_json(pose_b)}};
        write_text((dir / e.pose_json).string(), pose_doc.dump(2) + "\n");

        e.sha_source = sha256_file((dir / e.source_png).string());
        e.sha_garment = sha256_file((dir / e.garment_png).string());
        e.sha_target = sha256_file((dir / e.target_png).string());
        e.sha_pose = sha256_file((dir / e.pose_json).string());
        man.entries.push_back(std::move(e));
    }

    json doc;
    doc["version"] = man.version;
    doc["n"] = man.n;
    doc["seed"] = man.seed;
    json entries = json::array();
    for (const auto& e : man.entries) {
        entries.push_back(json{{"id", e.id},
                               {"person_id", e.person_id},
                               {"split", e.split},
                               {"files",
                                {{"source", e.source_png},
                                 {"garment", e.garment_png},
                                 {"target", e.target_png},
                                 {"pose", e.pose_json}}},
                               {"sha256",
                                {{"source", e.sha_source},
                                 {"garment", e.sha_garment},
                                 {"target", e.sha_target},
                                 {"pose", e.sha_pose}}},
                               {"person", person_json(e.person)},
                               {"garment", garment_json(e.garment)}});
    }
    doc["entries"] = entries;
    write_text((fs::path(opts.out_dir) / "manifest.json").string(), doc.dump(2) + "\n");
    return man;
}

Manifest load_manifest(const std::string& dir) {
    const auto path = (fs::path(dir) / "manifest.json").string();
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IntegrityError("manifest parse failed for " + path + ": " + e.what());
    }
    Manifest man;
    try {
        man.version = doc.at("version").get<int>();
        if (man.version != 1) {
            throw IntegrityError("manifest version " + std::to_string(man.version) +
                                 " unsupported");
        }
        man.n = doc.at("n").get<int>();
        man.seed = doc.at("seed").get<std::uint64_t>();
        man.root = dir;
        for (const auto& j : doc.at("entries")) {
            ManifestEntry e;
            e.id = j.at("id").get<int>();
            e.person_id = j.at("person_id").get<int>();
            e.split = j.at("split").get<std::string>();
            e.source_png = j.at("files").at("source").get<std::string>();
            e.garment_png = j.at("files").at("garment").get<std::string>();
            e.target_png = j.at("files").at("target").get<std::string>();
            e.pose_json = j.at("files").at("pose").get<std::string>();
            e.sha_source = j.at("sha256").at("source").get<std::string>();
            e.sha_garment = j.at("sha256").at("garment").get<std::string>();
            e.sha_target = j.at("sha256").at("target").get<std::string>();
            e.sha_pose = j.at("sha256").at("pose").get<std::string>();
            e.person = person_from_json(j.at("person"));
            e.garment = garment_from_json(j.at("garment"));
            man.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw IntegrityError("manifest field error in " + path + ": " + e.what());
    }
    if (static_cast<int>(man.entries.size()) != man.n) {
        throw IntegrityError("manifest entry count mismatch in " + path);
    }
    return man;
}

TripletSample load_triplet(const Manifest& manifest, int idx) {
    if (idx < 0 || idx >= static_cast<int>(manifest.entries.size())) {
        throw ValidationError("load_triplet: index " + std::to_string(idx) +
                              " out of range [0," + std::to_string(manifest.entries.size()) +
                              ")");
    }
    const auto& e = manifest.entries[static_cast<std::size_t>(idx)];
    const auto dir = fs::path(manifest.root);
    auto checked = [&](const std::string& name, const std::string& want_sha) {
        const auto path = (dir / name).string();
        if (!fs::exists(path)) throw IoError("load_triplet: missing file " + path);
        const auto got = sha256_file(path);
        if (got != want_sha) {
            throw IntegrityError("load_triplet: checksum mismatch for " + path);
        }
        return path;
    };
    TripletSample s;
    s.source = u8_to_tensor(read_png(checked(e.source_png, e.sha_source)));
    s.garment = u8_to_tensor(read_png(checked(e.garment_png, e.sha_garment)));
    s.target = u8_to_tensor(read_png(checked(e.target_png, e.sha_target)));
    json pose_doc;
    try {
        pose_doc = json::parse(read_text(checked(e.pose_json, e.sha_pose)));
        s.source_pose = pose_from_json(pose_doc.at("source"));
        s.target_pose = pose_from_json(pose_doc.at("target"));
    } catch (const json::exception& err) {
        throw IntegrityError("load_triplet: bad pose json for id " + std::to_string(e.id) + ": " +
                             err.what());
    }
    s.person = e.person;
    s.garment_spec = e.garment;
    return s;
}

}  // namespace odpg

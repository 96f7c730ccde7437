#include "cmaseg/synthetic.hpp"

#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;

namespace cmaseg {

namespace {

constexpr const char* kShapeNames[kNumShapeKinds] = {"circle", "square", "triangle",
                                                     "star",   "cross",  "ring"};
constexpr const char* kColorNames[kNumColors] = {"red", "green", "blue", "yellow", "magenta",
                                                 "cyan"};
constexpr uint8_t kColorRgb[kNumColors][3] = {{230, 45, 45},  {45, 200, 70},  {60, 95, 230},
                                              {235, 220, 50}, {220, 60, 220}, {60, 215, 215}};
constexpr const char* kDirectionNames[kNumDirections] = {"left", "right", "up", "down"};
constexpr double kDirectionVec[kNumDirections][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
constexpr uint8_t kBackground = 16;

// displacement wrapped to [-canvas/2, canvas/2)
double wrap_delta(double d, double canvas) {
    d = std::fmod(d, canvas);
    if (d < -canvas / 2) d += canvas;
    if (d >= canvas / 2) d -= canvas;
    return d;
}

bool point_in_triangle(double px, double py, double r) {
    // vertices (0, -r), (-r, r), (r, r)
    auto side = [](double ax, double ay, double bx, double by, double x, double y) {
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
    };
    const double d1 = side(0, -r, -r, r, px, py);
    const double d2 = side(-r, r, r, r, px, py);
    const double d3 = side(r, r, 0, -r, px, py);
    const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
    const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(has_neg && has_pos);
}

bool point_in_star(double px, double py, double r) {
    // five-pointed star as a 10-gon, even-odd rule
    double vx[10], vy[10];
    for (int i = 0; i < 10; ++i) {
        const double rad = (i % 2 == 0) ? r : 0.45 * r;
        const double ang = -M_PI / 2 + i * M_PI / 5;
        vx[i] = rad * std::cos(ang);
        vy[i] = rad * std::sin(ang);
    }
    bool inside = false;
    for (int i = 0, j = 9; i < 10; j = i++) {
        if ((vy[i] > py) != (vy[j] > py) &&
            px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i])
            inside = !inside;
    }
    return inside;
}

bool shape_covers(ShapeKind kind, double dx, double dy, double r) {
    switch (kind) {
        case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
        case ShapeKind::square: return std::max(std::abs(dx), std::abs(dy)) <= r;
        case ShapeKind::triangle: return point_in_triangle(dx, dy, r);
        case ShapeKind::star: return point_in_star(dx, dy, r);
        case ShapeKind::cross: {
            const double arm = 0.36 * r;
            return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= r);
        }
        case ShapeKind::ring: {
            const double d2 = dx * dx + dy * dy;
            const double inner = 0.55 * r;
            return d2 >= inner * inner && d2 <= r * r;
        }
    }
    return false;
}

}  // namespace

const char* shape_name(ShapeKind kind) { return kShapeNames[static_cast<size_t>(kind)]; }
const char* color_name(size_t color_index) { return kColorNames[color_index]; }
const char* direction_name(size_t dir_index) { return kDirectionNames[dir_index]; }

std::string SyntheticSceneSpec::expression() const {
    return std::string("the ") + color_name(referent.color) + " " + shape_name(referent.shape) +
           " moving " + direction_name(referent.direction);
}

void SyntheticSceneSpec::validate() const {
    if (canvas < 32 || canvas % 32 != 0)
        fail(ErrorCode::config, "synthetic canvas must be >= 32 and divisible by 32");
    if (frames == 0) fail(ErrorCode::config, "synthetic video needs at least one frame");
    for (const auto& d : distractors) {
        if (d.shape == referent.shape && d.color == referent.color &&
            d.direction == referent.direction)
            fail(ErrorCode::config,
                 "distractor matches the referent in every named attribute; the expression would "
                 "be ambiguous");
    }
}

bool object_covers(const ObjectSpec& obj, size_t frame, size_t canvas, double px, double py) {
    const double t = static_cast<double>(frame);
    const double cx = obj.cx + t * obj.speed * kDirectionVec[obj.direction][0];
    const double cy = obj.cy + t * obj.speed * kDirectionVec[obj.direction][1];
    const double c = static_cast<double>(canvas);
    const double dx = wrap_delta(px - cx, c);
    const double dy = wrap_delta(py - cy, c);
    return shape_covers(obj.shape, dx, dy, obj.half);
}

SyntheticVideo generate_synthetic_video(const SyntheticSceneSpec& spec) {
    spec.validate();
    SyntheticVideo video;
    video.expression = spec.expression();
    const size_t c = spec.canvas;
    for (size_t t = 0; t < spec.frames; ++t) {
        ImageRGB frame;
        frame.h = frame.w = c;
        frame.px.assign(c * c * 3, kBackground);
        ImageGray mask;
        mask.h = mask.w = c;
        mask.px.assign(c * c, 0);
        auto paint = [&](const ObjectSpec& obj) {
            const uint8_t* rgb = kColorRgb[obj.color];
            for (size_t y = 0; y < c; ++y)
                for (size_t x = 0; x < c; ++x)
                    if (object_covers(obj, t, c, x + 0.5, y + 0.5)) {
                        uint8_t* px = &frame.px[(y * c + x) * 3];
                        px[0] = rgb[0];
                        px[1] = rgb[1];
                        px[2] = rgb[2];
                    }
        };
        for (const auto& d : spec.distractors) paint(d);
        paint(spec.referent);  // drawn last, never occluded
        for (size_t y = 0; y < c; ++y)
            for (size_t x = 0; x < c; ++x)
                if (object_covers(spec.referent, t, c, x + 0.5, y + 0.5)) mask.px[y * c + x] = 255;
        video.frames.push_back(std::move(frame));
        video.masks.push_back(std::move(mask));
    }
    return video;
}

SyntheticSceneSpec sample_scene_spec(ShapeKind shape, size_t canvas, size_t frames, Rng& rng) {
    SyntheticSceneSpec spec;
    spec.canvas = canvas;
    spec.frames = frames;
    const double cd = static_cast<double>(canvas);
    auto sample_object = [&](ShapeKind kind) {
        ObjectSpec o;
        o.shape = kind;
        o.color = rng.uniform_index(kNumColors);
        o.direction = rng.uniform_index(kNumDirections);
        o.speed = rng.uniform(1.0, 3.0);
        o.half = rng.uniform(0.16 * cd, 0.26 * cd);
        o.cx = rng.uniform(0.0, cd);
        o.cy = rng.uniform(0.0, cd);
        return o;
    };
    spec.referent = sample_object(shape);
    const size_t n_distractors = 1 + rng.uniform_index(2);
    for (size_t i = 0; i < n_distractors; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            ObjectSpec d =
                sample_object(static_cast<ShapeKind>(rng.uniform_index(kNumShapeKinds)));
            d.half *= 0.8;  // distractors slightly smaller so the referent stays visible
            if (d.shape == spec.referent.shape && d.color == spec.referent.color &&
                d.direction == spec.referent.direction)
                continue;
            spec.distractors.push_back(d);
            placed = true;
        }
        if (!placed)
            fail(ErrorCode::numeric, "sample_scene_spec: could not place a unique distractor");
    }
    spec.validate();
    return spec;
}

Vocabulary grammar_vocabulary() {
    std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk, "the", "moving"};
    for (size_t i = 0; i < kNumColors; ++i) tokens.push_back(kColorNames[i]);
    for (size_t i = 0; i < kNumShapeKinds; ++i) tokens.push_back(kShapeNames[i]);
    for (size_t i = 0; i < kNumDirections; ++i) tokens.push_back(kDirectionNames[i]);
    return Vocabulary(std::move(tokens));
}

Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    if (spec.classes == 0 || spec.classes > kNumShapeKinds)
        fail(ErrorCode::config, "generate_dataset: classes must be in [1, 6]");
    if (spec.videos_per_class == 0)
        fail(ErrorCode::config, "generate_dataset: videos_per_class must be >= 1");
    fs::create_directories(out_dir);
    Manifest manifest;
    manifest.base_dir = out_dir;
    for (size_t c = 0; c < spec.classes; ++c)
        manifest.classes.push_back(kShapeNames[c]);

    char buf[64];
    for (size_t c = 0; c < spec.classes; ++c) {
        for (size_t v = 0; v < spec.videos_per_class; ++v) {
            Rng rng = Rng::derive(spec.seed, c * 1000003ull + v);
            SyntheticSceneSpec scene =
                sample_scene_spec(static_cast<ShapeKind>(c), spec.canvas, spec.frames, rng);
            scene.seed = spec.seed;
            SyntheticVideo video = generate_synthetic_video(scene);

            std::snprintf(buf, sizeof(buf), "%s_%03zu", kShapeNames[c], v);
            const std::string video_id = buf;
            const std::string rel_dir = "videos/" + video_id;
            fs::create_directories(fs::path(out_dir) / rel_dir);

            VideoRecord record;
            record.video_id = video_id;
            record.class_label = kShapeNames[c];
            for (size_t t = 0; t < video.frames.size(); ++t) {
                std::snprintf(buf, sizeof(buf), "frame_%04zu.ppm", t);
                const std::string frame_rel = rel_dir + "/" + buf;
                std::snprintf(buf, sizeof(buf), "mask_%04zu.pgm", t);
                const std::string mask_rel = rel_dir + "/" + buf;
                write_ppm((fs::path(out_dir) / frame_rel).string(), video.frames[t]);
                write_pgm((fs::path(out_dir) / mask_rel).string(), video.masks[t]);
                record.frames.push_back(frame_rel);
                record.masks.push_back(mask_rel);
            }
            record.expressions.push_back(video.expression);
            manifest.videos.push_back(std::move(record));
        }
    }
    grammar_vocabulary().save((fs::path(out_dir) / "vocab.txt").string());
    write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

}  // namespace cmaseg

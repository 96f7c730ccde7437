#pragma once

#include "cmaseg/episodes.hpp"
#include "cmaseg/image.hpp"

namespace cmaseg {

// Six shape classes; the shape name is the class label.
enum class ShapeKind { circle, square, triangle, star, cross, ring };
inline constexpr size_t kNumShapeKinds = 6;
const char* shape_name(ShapeKind kind);
const char* color_name(size_t color_index);      // 6 colors
const char* direction_name(size_t dir_index);    // left right up down
inline constexpr size_t kNumColors = 6;
inline constexpr size_t kNumDirections = 4;

struct ObjectSpec {
    ShapeKind shape = ShapeKind::circle;
    size_t color = 0;
    size_t direction = 0;
    double speed = 1.0;   // pixels per frame
    double half = 10.0;   // half extent in pixels
    double cx = 0.0, cy = 0.0;  // start center
};

struct SyntheticSceneSpec {
    ObjectSpec referent;
    std::vector<ObjectSpec> distractors;  // each differs from the referent in
                                          // color, shape, or direction
    size_t canvas = 64;                   // square, divisible by 32
    size_t frames = 8;
    uint64_t seed = 0;

    std::string expression() const;  // "the <color> <shape> moving <direction>"
    void validate() const;
};

// Exact point-in-shape rasterization with toroidal wrap-around motion.
bool object_covers(const ObjectSpec& obj, size_t frame, size_t canvas, double px, double py);

struct SyntheticVideo {
    std::vector<ImageRGB> frames;
    std::vector<ImageGray> masks;  // referent only, exact
    std::string expression;
};

SyntheticVideo generate_synthetic_video(const SyntheticSceneSpec& spec);

// Draws a scene spec for the given class; retries distractor attributes until
// the expression uniquely identifies the referent (bounded, then error).
SyntheticSceneSpec sample_scene_spec(ShapeKind shape, size_t canvas, size_t frames, Rng& rng);

// Closed vocabulary of the expression grammar (plus <pad>/<unk>).
Vocabulary grammar_vocabulary();

struct DatasetSpec {
    size_t classes = 6;  // uses the first `classes` shape kinds
    size_t videos_per_class = 10;
    size_t frames = 8;
    size_t canvas = 64;
    uint64_t seed = 0;
};

// Writes frames (PPM), masks (PGM), vocab.txt and manifest.json under
// out_dir; returns the manifest. Byte-identical for a fixed spec.
Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

}  // namespace cmaseg

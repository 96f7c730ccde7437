#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmaseg/gradcheck.hpp"
#include "cmaseg/losses.hpp"
#include "cmaseg/metrics.hpp"
#include "cmaseg/synthetic.hpp"

namespace py = pybind11;
using namespace cmaseg;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<size_t>(a.shape(i));
    Tensor t = Tensor::uninitialized(shape);
    std::memcpy(t.data(), a.data(), t.size() * sizeof(double));
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
    return out;
}

BinaryMask mask_from_array(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw py::value_error("mask must be a 2-D array");
    BinaryMask m;
    m.h = static_cast<size_t>(a.shape(0));
    m.w = static_cast<size_t>(a.shape(1));
    m.px.resize(m.h * m.w);
    for (size_t i = 0; i < m.px.size(); ++i) m.px[i] = a.data()[i] ? 1 : 0;
    return m;
}

}  // namespace

PYBIND11_MODULE(_cmaseg, m) {
    m.doc() = "few-shot referring video object segmentation core";

    py::register_exception<Error>(m, "CmasegError");

    m.def("softmax", [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
                        size_t axis) {
        Tape tape(false);
        return array_from_tensor(tape.softmax(tensor_from_array(x), axis));
    }, py::arg("x"), py::arg("axis"));

    m.def("matmul", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                       py::array_t<double, py::array::c_style | py::array::forcecast> b) {
        Tape tape(false);
        return array_from_tensor(tape.matmul(tensor_from_array(a), tensor_from_array(b)));
    });

    m.def("conv2d", [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
                       py::array_t<double, py::array::c_style | py::array::forcecast> k,
                       size_t stride, size_t padding) {
        Tape tape(false);
        return array_from_tensor(
            tape.conv2d(tensor_from_array(x), tensor_from_array(k), stride, padding));
    }, py::arg("x"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 1);

    m.def("bilinear_resize", [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
                                size_t h, size_t w) {
        Tape tape(false);
        return array_from_tensor(tape.bilinear_resize(tensor_from_array(x), h, w));
    });

    m.def("region_similarity", [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> pred,
                                  py::array_t<uint8_t, py::array::c_style | py::array::forcecast> gt) {
        return region_similarity(mask_from_array(pred), mask_from_array(gt));
    });

    m.def("contour_accuracy", [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> pred,
                                 py::array_t<uint8_t, py::array::c_style | py::array::forcecast> gt,
                                 size_t tol) {
        return contour_accuracy(mask_from_array(pred), mask_from_array(gt), tol);
    }, py::arg("pred"), py::arg("gt"), py::arg("tol") = 1);

    m.def("default_f_tolerance", &default_f_tolerance);

    m.def("focal_loss", [](py::array_t<double, py::array::c_style | py::array::forcecast> logits,
                           py::array_t<double, py::array::c_style | py::array::forcecast> targets,
                           double alpha, double gamma) {
        Tape tape(false);
        return focal_loss(tape, tensor_from_array(logits), tensor_from_array(targets), alpha,
                          gamma).item();
    }, py::arg("logits"), py::arg("targets"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

    m.def("dice_loss", [](py::array_t<double, py::array::c_style | py::array::forcecast> logits,
                          py::array_t<double, py::array::c_style | py::array::forcecast> gt,
                          double eps) {
        Tape tape(false);
        return dice_loss(tape, tensor_from_array(logits), tensor_from_array(gt), eps).item();
    }, py::arg("logits"), py::arg("gt"), py::arg("eps") = 1.0);

    m.def("grad_check_ops", [](uint64_t seed) {
        double worst = 0;
        for (const auto& chk : op_grad_checks())
            worst = std::max(worst, chk.run(seed).max_rel_err);
        return worst;
    }, py::arg("seed") = 0);

    m.def("self_affinity_plain",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
             py::array_t<double, py::array::c_style | py::array::forcecast> wq,
             py::array_t<double, py::array::c_style | py::array::forcecast> wk,
             py::array_t<double, py::array::c_style | py::array::forcecast> wv,
             size_t n_heads) {
              Tensor xt = tensor_from_array(x);
              AttentionConfig cfg;
              cfg.d_model = xt.extent(1);
              cfg.n_heads = n_heads;
              cfg.plain_affinity = true;
              MhaParams p;
              p.wq = tensor_from_array(wq);
              p.wk = tensor_from_array(wk);
              p.wv = tensor_from_array(wv);
              p.bq = Tensor::zeros({cfg.d_model});
              p.bk = Tensor::zeros({cfg.d_model});
              p.bv = Tensor::zeros({cfg.d_model});
              Tape tape(false);
              return array_from_tensor(self_affinity(tape, xt, cfg, p));
          },
          py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("n_heads") = 1);

    m.def("generate_synthetic_video", [](const std::string& shape, size_t canvas, size_t frames,
                                         uint64_t seed) {
        ShapeKind kind = ShapeKind::circle;
        bool found = false;
        for (size_t i = 0; i < kNumShapeKinds; ++i)
            if (shape == shape_name(static_cast<ShapeKind>(i))) {
                kind = static_cast<ShapeKind>(i);
                found = true;
            }
        if (!found) throw py::value_error("unknown shape class: " + shape);
        Rng rng(seed);
        SyntheticSceneSpec spec = sample_scene_spec(kind, canvas, frames, rng);
        SyntheticVideo video = generate_synthetic_video(spec);

        py::array_t<uint8_t> frames_arr({frames, canvas, canvas, size_t(3)});
        py::array_t<uint8_t> masks_arr({frames, canvas, canvas});
        for (size_t t = 0; t < frames; ++t) {
            std::memcpy(frames_arr.mutable_data() + t * canvas * canvas * 3,
                        video.frames[t].px.data(), canvas * canvas * 3);
            std::memcpy(masks_arr.mutable_data() + t * canvas * canvas,
                        video.masks[t].px.data(), canvas * canvas);
        }
        py::dict out;
        out["frames"] = frames_arr;
        out["masks"] = masks_arr;
        out["expression"] = video.expression;
        return out;
    }, py::arg("shape"), py::arg("canvas") = 64, py::arg("frames") = 8, py::arg("seed") = 0);

    m.def("grammar_tokens", [] {
        Vocabulary vocab = grammar_vocabulary();
        std::vector<std::string> out;
        for (size_t i = 0; i < vocab.size(); ++i) out.push_back(vocab.token_of(int(i)));
        return out;
    });
}

#include "cmaseg/gradcheck.hpp"

#include <cmath>

namespace cmaseg {

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps) {
    for (auto& t : inputs) t.set_requires_grad(true);

    Tape tape;
    Tensor loss = f(tape, inputs);
    if (loss.size() != 1) fail(ErrorCode::input, "grad_check: f must return a scalar");
    if (!std::isfinite(loss.item()))
        fail(ErrorCode::numeric, "grad_check: non-finite value at base point");
    tape.backward(loss);

    std::vector<std::vector<scalar>> analytic(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        analytic[i].assign(inputs[i].size(), 0.0);
        if (inputs[i].grad_allocated())
            std::copy(inputs[i].grad(), inputs[i].grad() + inputs[i].size(), analytic[i].begin());
        inputs[i].drop_grad();
        inputs[i].set_requires_grad(false);
    }

    auto eval = [&](const char* where) {
        Tape t(false);
        Tensor v = f(t, inputs);
        const scalar y = v.item();
        if (!std::isfinite(y))
            fail(ErrorCode::numeric, std::string("grad_check: non-finite value at ") + where);
        return y;
    };

    GradCheckReport report;
    for (size_t i = 0; i < inputs.size(); ++i) {
        scalar* data = inputs[i].data();
        for (size_t j = 0; j < inputs[i].size(); ++j) {
            const scalar saved = data[j];
            const std::string where = "input" + std::to_string(i) + "[" + std::to_string(j) + "]";
            data[j] = saved + eps;
            const scalar fp = eval(where.c_str());
            data[j] = saved - eps;
            const scalar fm = eval(where.c_str());
            data[j] = saved;
            const scalar numeric = (fp - fm) / (2.0 * eps);
            const scalar a = analytic[i][j];
            const scalar abs_err = std::abs(a - numeric);
            const scalar rel =
                abs_err / std::max({std::abs(a), std::abs(numeric), 1e-3});
            ++report.coords_checked;
            if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_location = where;
            }
        }
    }
    return report;
}

GradCheckReport fd_check_coords(const std::function<double()>& eval,
                                const std::vector<CoordCheck>& coords, double eps) {
    GradCheckReport report;
    for (const auto& c : coords) {
        Tensor t = c.tensor;
        scalar* data = t.data();
        const scalar saved = data[c.flat_index];
        data[c.flat_index] = saved + eps;
        const scalar fp = eval();
        data[c.flat_index] = saved - eps;
        const scalar fm = eval();
        data[c.flat_index] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            fail(ErrorCode::numeric, "fd_check_coords: non-finite value at " + c.name);
        const scalar numeric = (fp - fm) / (2.0 * eps);
        const scalar abs_err = std::abs(c.analytic - numeric);
        const scalar rel = abs_err / std::max({std::abs(c.analytic), std::abs(numeric), 1e-3});
        ++report.coords_checked;
        if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_location = c.name + "[" + std::to_string(c.flat_index) + "]";
        }
    }
    return report;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::uninitialized(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

Shape random_shape(Rng& rng, size_t rank, size_t max_extent = 5) {
    Shape s(rank);
    for (auto& e : s) e = 1 + rng.uniform_index(max_extent);
    return s;
}

GradCheckReport check(const ScalarFn& f, std::vector<Tensor> inputs) {
    return grad_check(f, std::move(inputs));
}

}  // namespace

std::vector<NamedCheck> op_grad_checks() {
    std::vector<NamedCheck> checks;
    auto push = [&](std::string name, std::function<GradCheckReport(uint64_t)> run,
                    double tol = 1e-6) {
        checks.push_back({std::move(name), std::move(run), tol});
    };

    push("add", [](uint64_t seed) {
        Rng rng(seed);
        Shape sh = random_shape(rng, 2);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul(t.add(in[0], in[1]), in[0]));
        }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    });
    push("sub", [](uint64_t seed) {
        Rng rng(seed);
        Shape sh = random_shape(rng, 3);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul(t.sub(in[0], in[1]), in[1]));
        }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    });
    push("mul", [](uint64_t seed) {
        Rng rng(seed);
        Shape sh = random_shape(rng, 2);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul(in[0], in[1]));
        }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    });
    push("div", [](uint64_t seed) {
        Rng rng(seed);
        Shape sh = random_shape(rng, 2);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.div(in[0], in[1]));
        }, {random_tensor(sh, rng), random_tensor(sh, rng, 0.5, 2.0)});
    });
    push("add_scalar", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_mean(t.add_scalar(in[0], 2.5));
        }, {random_tensor(random_shape(rng, 2), rng)});
    });
    push("mul_scalar", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul_scalar(in[0], -1.75));
        }, {random_tensor(random_shape(rng, 2), rng)});
    });
    push("relu", [](uint64_t seed) {
        Rng rng(seed);
        // keep values away from the kink so finite differences are valid
        Tensor x = random_tensor(random_shape(rng, 2), rng);
        for (size_t i = 0; i < x.size(); ++i)
            if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.1;
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.relu(in[0]));
        }, {x});
    });
    push("sigmoid", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.sigmoid(in[0]));
        }, {random_tensor(random_shape(rng, 2), rng, -3, 3)});
    });
    push("log_clamped", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.log_clamped(in[0]));
        }, {random_tensor(random_shape(rng, 2), rng, 0.1, 2.0)});
    });
    push("pow_scalar", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.pow_scalar(in[0], 2.0));
        }, {random_tensor(random_shape(rng, 2), rng, 0.1, 1.5)});
    });
    push("scale_rows", [](uint64_t seed) {
        Rng rng(seed);
        const size_t r = 2 + rng.uniform_index(4), c = 2 + rng.uniform_index(4);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.scale_rows(in[0], in[1]));
        }, {random_tensor({r, c}, rng), random_tensor({r}, rng)});
    });
    push("matmul", [](uint64_t seed) {
        Rng rng(seed);
        const size_t m = 1 + rng.uniform_index(4), k = 1 + rng.uniform_index(4),
                     n = 1 + rng.uniform_index(4);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.matmul(in[0], in[1]));
        }, {random_tensor({m, k}, rng), random_tensor({k, n}, rng)});
    });
    push("matmul_batched", [](uint64_t seed) {
        Rng rng(seed);
        const size_t b = 2 + rng.uniform_index(2), m = 1 + rng.uniform_index(3),
                     k = 1 + rng.uniform_index(3), n = 1 + rng.uniform_index(3);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.matmul(in[0], in[1]));
        }, {random_tensor({b, m, k}, rng), random_tensor({b, k, n}, rng)});
    });
    push("matmul_broadcast", [](uint64_t seed) {
        Rng rng(seed);
        const size_t b = 2 + rng.uniform_index(2), m = 1 + rng.uniform_index(3),
                     k = 1 + rng.uniform_index(3), n = 1 + rng.uniform_index(3);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.matmul(in[0], in[1]));
        }, {random_tensor({b, m, k}, rng), random_tensor({k, n}, rng)});
    });
    push("linear", [](uint64_t seed) {
        Rng rng(seed);
        const size_t r = 1 + rng.uniform_index(4), di = 1 + rng.uniform_index(4),
                     dn = 1 + rng.uniform_index(4);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.linear(in[0], in[1], in[2]));
        }, {random_tensor({r, di}, rng), random_tensor({di, dn}, rng), random_tensor({dn}, rng)});
    });
    push("softmax", [](uint64_t seed) {
        Rng rng(seed);
        Shape sh = random_shape(rng, 2);
        const size_t axis = rng.uniform_index(2);
        return check([axis](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul(t.softmax(in[0], axis), in[1]));
        }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    });
    push("layer_norm", [](uint64_t seed) {
        Rng rng(seed);
        const size_t r = 1 + rng.uniform_index(3), d = 2 + rng.uniform_index(4);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.mul(t.layer_norm(in[0], in[1], in[2]), in[3]));
        }, {random_tensor({r, d}, rng), random_tensor({d}, rng, 0.5, 1.5),
            random_tensor({d}, rng), random_tensor({r, d}, rng)});
    });
    push("conv2d", [](uint64_t seed) {
        Rng rng(seed);
        const size_t ci = 1 + rng.uniform_index(2), co = 1 + rng.uniform_index(2);
        const size_t h = 4 + rng.uniform_index(3), w = 4 + rng.uniform_index(3);
        const size_t stride = 1 + rng.uniform_index(2);
        return check([stride](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.conv2d(in[0], in[1], stride, 1));
        }, {random_tensor({ci, h, w}, rng), random_tensor({co, ci, 3, 3}, rng)});
    });
    push("add_channel_bias", [](uint64_t seed) {
        Rng rng(seed);
        const size_t c = 1 + rng.uniform_index(3);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.add_channel_bias(in[0], in[1]));
        }, {random_tensor({c, 3, 4}, rng), random_tensor({c}, rng)});
    });
    push("bilinear_resize", [](uint64_t seed) {
        Rng rng(seed);
        const size_t c = 1 + rng.uniform_index(2);
        const size_t h = 2 + rng.uniform_index(4), w = 2 + rng.uniform_index(4);
        const size_t oh = 1 + rng.uniform_index(6), ow = 1 + rng.uniform_index(6);
        return check([oh, ow](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.bilinear_resize(in[0], oh, ow));
        }, {random_tensor({c, h, w}, rng)});
    });
    push("embed", [](uint64_t seed) {
        Rng rng(seed);
        const size_t v = 4 + rng.uniform_index(4), d = 2 + rng.uniform_index(3);
        std::vector<int> ids = {0, static_cast<int>(rng.uniform_index(v)),
                                static_cast<int>(rng.uniform_index(v))};
        return check([ids](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_sum(t.embed(in[0], ids));
        }, {random_tensor({v, d}, rng)});
    });
    push("reshape_transpose", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            Tensor r = t.reshape(in[0], {2, 3, 2});
            return t.reduce_sum(t.mul(t.transpose(r, 0, 2), t.transpose(in[1], 0, 2)));
        }, {random_tensor({12}, rng), random_tensor({2, 3, 2}, rng)});
    });
    push("concat_slice_stack", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            Tensor cat = t.concat({in[0], in[1]}, 1);
            Tensor s = t.stack0({t.slice0(cat, 0), t.slice0(cat, 1)});
            return t.reduce_mean(t.mul(s, s));
        }, {random_tensor({2, 2}, rng), random_tensor({2, 3}, rng)});
    });
    push("reduce_mean", [](uint64_t seed) {
        Rng rng(seed);
        return check([](Tape& t, const std::vector<Tensor>& in) {
            return t.reduce_mean(t.mul(in[0], in[0]));
        }, {random_tensor(random_shape(rng, 2), rng)});
    });
    return checks;
}

}  // namespace cmaseg

#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slpt/tensor.hpp"

namespace slpt {

/// A named trainable (or frozen) weight tensor. Modules own their parameters
/// by value; graphs only ever read them.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
};

/// Integer label map [H, W].
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    Mask() = default;
    Mask(int h, int w, int fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const noexcept { return labels.size(); }
    int max_label() const;
    bool operator==(const Mask&) const = default;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

/// Reverse-mode tape. Each evaluation (training step, scoring call) builds its
/// own graph, so gradients never live in shared state: parameter gradients are
/// read back from the graph after backward().
class Graph {
public:
    /// Receives the graph, the node's upstream gradient and its forward value.
    using BackwardFn = std::function<void(Graph&, const Tensor& dy, const Tensor& out)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var constant(Tensor value);
    /// Leaf that tracks gradients unless grad is disabled or the parameter is frozen.
    Var param(const Parameter& p);
    /// Leaf input whose gradient can be queried (used by Jacobian checks).
    Var input(Tensor value, bool requires_grad);

    /// Creates an op node. `requires_grad` is derived from parents.
    Var make(Tensor value, std::span<const Var> parents, BackwardFn backward);

    void backward(Var scalar);

    const Tensor& value(int id) const { return nodes_[id].value; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    /// Gradient buffer for accumulation; allocated on first use.
    Tensor& grad_buffer(int id);
    /// Gradient of a node after backward(); empty tensor if none reached it.
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

    /// Gradient w.r.t. a parameter used in this graph, zero-filled if unused.
    Tensor grad_of(const Parameter& p) const;
    bool uses(const Parameter& p) const { return param_nodes_.contains(&p); }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool grad_enabled_;
};

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};

namespace ops {

/// x [Cin,H,W], weight [Cout, Cin/groups, kh, kw], optional bias [Cout].
Var conv2d(Var x, Var weight, const Var* bias, const ConvSpec& spec);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
Var average(std::span<const Var> xs);
Var add_all(std::span<const Var> xs);

Var concat_channels(std::span<const Var> xs);
Var global_avg_pool(Var x);                 ///< [C,H,W] -> [C,1,1]
Var expand_spatial(Var x, int h, int w);    ///< [C,1,1] -> [C,h,w]
Var mul_channel(Var x, Var gate);           ///< [C,H,W] * [C,1,1]
Var resize_bilinear(Var x, int h, int w);   ///< half-pixel centers, edge clamped
Var upsample_nearest(Var x, int factor);

Var softmax_channels(Var logits);
Var log_softmax_channels(Var logits);

/// Mean per-pixel cross-entropy from logits [C,H,W] and labels.
Var cross_entropy(Var logits, const Mask& labels);
/// Soft Tversky index over foreground channels 1..C-1 of prob [C,H,W].
Var tversky_index(Var prob, const Mask& labels, double alpha, double beta, double eps);
/// Sum over unordered pairs of the cosine similarity of the flattened inputs.
Var pairwise_cosine_sum(std::span<const Var> xs);
/// -sum p * log(max(p, floor)) over every element.
Var entropy_sum(Var prob, double floor);

} // namespace ops
} // namespace slpt

#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "remat/errors.hpp"
#include "remat/types.hpp"

namespace remat {

// Ground-truth replay of a schedule against a chain. Residency is tracked per
// canonical tensor: block i's output data aliases block i+1's input data, and
// block i's output grad aliases block i+1's input grad, so the seam tensors
// exist once.

struct SimTraceRow {
    int op_index = 0;
    std::string op;
    Micros elapsed = 0;
    Bytes current_mem = 0;
    Bytes peak_mem = 0;
};

struct SimReport {
    Micros makespan = 0;
    Bytes peak_mem = 0;
    Bytes mem_at_loss = 0;
    Micros overhead = 0;  // makespan minus the one-pass makespan
    bool loss_seen = false;
    std::vector<SimTraceRow> trace;  // filled only when requested
};

namespace detail {

// Canonical tensor ids for a chain: (block, dnode) -> global tensor index.
struct TensorSpace {
    std::vector<std::vector<int>> canon;  // per block, per dnode
    std::vector<Bytes> size;
    int count = 0;

    explicit TensorSpace(const Chain& chain) {
        const int L = chain.length();
        canon.resize(L);
        for (int b = 0; b < L; ++b)
            canon[b].assign(chain.blocks[b].dnodes.size(), -1);
        auto fresh = [&](Bytes sz) {
            size.push_back(sz);
            return count++;
        };
        for (int b = 0; b < L; ++b) {
            const CDGraph& g = chain.blocks[b];
            for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d) {
                if (canon[b][d] >= 0) continue;
                canon[b][d] = fresh(g.dnodes[d].size);
                // activation seam: block b's output data is block b+1's input data
                if (b + 1 < L && d == g.output_data)
                    canon[b + 1][chain.blocks[b + 1].input_data] = canon[b][d];
            }
            // grad seam: block b+1's input grad (produced by its backward) is
            // the tensor block b's backward consumes as its output grad
            if (b + 1 < L) {
                int og = chain.blocks[b + 1].input_grad();
                int tg = g.output_grad();
                if (og >= 0 && tg >= 0) canon[b + 1][og] = canon[b][tg];
            }
        }
    }
};

}  // namespace detail

class Simulator {
public:
    Simulator(const Chain& chain,
              const std::vector<std::vector<BlockOption>>* menus = nullptr)
        : chain_(chain), space_(chain), menus_(menus) {
        resident_.assign(space_.count, false);
        run_count_.resize(chain.length());
        for (int b = 0; b < chain.length(); ++b)
            run_count_[b].assign(chain.blocks[b].cnodes.size(), 0);
    }

    void mark_resident(int block, int dnode) {
        int t = space_.canon[block][dnode];
        if (!resident_[t]) {
            resident_[t] = true;
            current_ += space_.size[t];
            peak_ = std::max(peak_, current_);
        }
    }

    bool is_resident(int block, int dnode) const {
        return resident_[space_.canon[block][dnode]];
    }

    void step(const ScheduleOp& op) {
        switch (op.kind) {
            case ScheduleOp::Compute: {
                const CDGraph& g = graph(op.block);
                int c = g.cnode_index(op.target);
                if (c < 0)
                    throw ValidationError("unknown cnode " + op.target + " in block " +
                                          std::to_string(op.block));
                run_compute(op.block, c);
                break;
            }
            case ScheduleOp::Forget: {
                const CDGraph& g = graph(op.block);
                int d = g.dnode_index(op.target);
                if (d < 0)
                    throw ValidationError("unknown dnode " + op.target + " in block " +
                                          std::to_string(op.block));
                run_forget(op.block, d);
                break;
            }
            case ScheduleOp::BlockFwd:
            case ScheduleOp::BlockBwd: {
                const BlockOption& o = option(op.block, op.option);
                const auto& ops = op.kind == ScheduleOp::BlockFwd ? o.fwd_ops : o.bwd_ops;
                for (const BlockLocalOp& lo : ops) {
                    if (lo.kind == BlockLocalOp::Compute)
                        run_compute(op.block, lo.node);
                    else
                        run_forget(op.block, lo.node);
                }
                break;
            }
        }
    }

    Micros elapsed() const { return elapsed_; }
    Bytes current_mem() const { return current_; }
    Bytes peak_mem() const { return peak_; }
    Bytes mem_at_loss() const { return mem_at_loss_; }
    bool loss_done() const { return loss_done_; }
    const std::vector<std::vector<int>>& run_counts() const { return run_count_; }

private:
    const CDGraph& graph(int block) const {
        if (block < 0 || block >= chain_.length())
            throw ValidationError("block index " + std::to_string(block) + " out of range");
        return chain_.blocks[block];
    }

    const BlockOption& option(int block, int id) const {
        if (!menus_)
            throw ValidationError("schedule uses block ops but no option menu was provided");
        for (const BlockOption& o : (*menus_)[block])
            if (o.option_id == id) return o;
        throw ValidationError("block " + std::to_string(block) + " has no option " +
                              std::to_string(id));
    }

    void run_compute(int block, int c) {
        const CDGraph& g = graph(block);
        const CNode& node = g.cnodes[c];
        for (int d : node.deps)
            if (!is_resident(block, d))
                throw DanglingDependency("compute " + node.id + " (block " +
                                         std::to_string(block) + ") needs absent tensor " +
                                         g.dnodes[d].id);
        if (node.kind == CNodeKind::Loss) {
            if (loss_done_) throw DoubleLoss("loss computed twice");
            loss_done_ = true;
        }
        Bytes fresh = 0;
        for (int d : node.outputs)
            if (!is_resident(block, d)) fresh += g.dnodes[d].size;
        // peak while the op runs: residency + temporaries + new outputs
        peak_ = std::max(peak_, current_ + node.tmp_mem + fresh);
        for (int d : node.outputs) mark_resident(block, d);
        elapsed_ += node.time;
        run_count_[block][c] += 1;
        if (node.kind == CNodeKind::Loss) mem_at_loss_ = current_;
    }

    void run_forget(int block, int d) {
        int t = space_.canon[block][d];
        if (!resident_[t])
            throw ForgetAbsent("forget of absent tensor " + graph(block).dnodes[d].id +
                               " (block " + std::to_string(block) + ")");
        resident_[t] = false;
        current_ -= space_.size[t];
    }

    const Chain& chain_;
    detail::TensorSpace space_;
    const std::vector<std::vector<BlockOption>>* menus_;
    std::vector<bool> resident_;
    std::vector<std::vector<int>> run_count_;
    Bytes current_ = 0;
    Bytes peak_ = 0;
    Bytes mem_at_loss_ = 0;
    Micros elapsed_ = 0;
    bool loss_done_ = false;
};

struct SimulateOptions {
    bool want_trace = false;
    bool require_complete = true;  // every backward once, loss once
    const std::vector<std::vector<BlockOption>>* menus = nullptr;
    std::vector<std::pair<int, int>> preresident;  // (block, dnode) before replay
};

inline SimReport simulate(const Schedule& schedule, const Chain& chain, Bytes budget,
                          const SimulateOptions& opts = {}) {
    Simulator sim(chain, opts.menus);
    // chain entry state: the whole-chain input is resident
    sim.mark_resident(0, chain.blocks[0].input_data);
    for (auto [b, d] : opts.preresident) sim.mark_resident(b, d);

    SimReport rep;
    int idx = 0;
    for (const ScheduleOp& op : schedule.ops) {
        sim.step(op);
        if (opts.want_trace) {
            std::string name;
            switch (op.kind) {
                case ScheduleOp::Compute: name = "compute " + op.target; break;
                case ScheduleOp::Forget: name = "forget " + op.target; break;
                case ScheduleOp::BlockFwd:
                    name = "block_fwd " + std::to_string(op.block) + ":" +
                           std::to_string(op.option);
                    break;
                case ScheduleOp::BlockBwd:
                    name = "block_bwd " + std::to_string(op.block) + ":" +
                           std::to_string(op.option);
                    break;
            }
            rep.trace.push_back({idx, name, sim.elapsed(), sim.current_mem(), sim.peak_mem()});
        }
        ++idx;
    }
    rep.makespan = sim.elapsed();
    rep.peak_mem = sim.peak_mem();
    rep.mem_at_loss = sim.mem_at_loss();
    rep.loss_seen = sim.loss_done();

    Micros one_pass = 0;
    for (const CDGraph& g : chain.blocks)
        for (const CNode& c : g.cnodes) one_pass += c.time;
    rep.overhead = rep.makespan - one_pass;

    if (opts.require_complete) {
        if (!sim.loss_done()) throw ValidationError("schedule never computes the loss");
        const auto& counts = sim.run_counts();
        for (int b = 0; b < chain.length(); ++b) {
            const CDGraph& g = chain.blocks[b];
            for (int c = 0; c < static_cast<int>(g.cnodes.size()); ++c)
                if (g.cnodes[c].kind == CNodeKind::Backward && counts[b][c] != 1)
                    throw ValidationError("backward " + g.cnodes[c].id + " of block " +
                                          std::to_string(b) + " ran " +
                                          std::to_string(counts[b][c]) + " times");
        }
    }
    if (budget >= 0 && rep.peak_mem > budget)
        throw BudgetExceeded("peak " + std::to_string(rep.peak_mem) + " exceeds budget " +
                                 std::to_string(budget) + " by " +
                                 std::to_string(rep.peak_mem - budget),
                             rep.peak_mem - budget);
    return rep;
}

// Wraps one CDGraph as a single-block chain; handy for per-block replays.
inline Chain single_block_chain(const CDGraph& g) {
    Chain c;
    c.blocks.push_back(g);
    c.equiv_class = {0};
    return c;
}

// One-pass schedule that forgets every tensor right after its last consumer.
// Kept resident: the block input and the sink dnodes (deliverables).
inline Schedule eager_free_schedule(const CDGraph& g) {
    EdgeSets es = derive_edge_sets(g);
    Schedule s;
    std::vector<int> last_use(g.dnodes.size(), -1);
    for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d) {
        for (int c : es.children_of_data[d]) last_use[d] = std::max(last_use[d], c);
        for (int p : g.dnodes[d].parents) last_use[d] = std::max(last_use[d], p);
    }
    auto sinks = g.sink_dnodes();
    auto keep = [&](int d) {
        return d == g.input_data ||
               std::find(sinks.begin(), sinks.end(), d) != sinks.end();
    };
    for (int c = 0; c < static_cast<int>(g.cnodes.size()); ++c) {
        s.ops.push_back(ScheduleOp::compute(0, g.cnodes[c].id));
        for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d)
            if (last_use[d] == c && !keep(d))
                s.ops.push_back(ScheduleOp::forget(0, g.dnodes[d].id));
    }
    return s;
}

// One-pass schedule with no forgets before the loss; after the loss every
// tensor is forgotten after its last use (or right after the loss when its
// last use was in the forward phase).
inline Schedule no_recompute_schedule(const CDGraph& g) {
    EdgeSets es = derive_edge_sets(g);
    Schedule s;
    std::vector<int> last_use(g.dnodes.size(), -1);
    for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d) {
        for (int c : es.children_of_data[d]) last_use[d] = std::max(last_use[d], c);
        for (int p : g.dnodes[d].parents) last_use[d] = std::max(last_use[d], p);
    }
    auto sinks = g.sink_dnodes();
    auto keep = [&](int d) {
        return d == g.input_data ||
               std::find(sinks.begin(), sinks.end(), d) != sinks.end();
    };
    for (int c = 0; c < static_cast<int>(g.cnodes.size()); ++c) {
        s.ops.push_back(ScheduleOp::compute(0, g.cnodes[c].id));
        if (c < g.loss_index) continue;
        for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d)
            if (std::max(last_use[d], g.loss_index) == c && !keep(d))
                s.ops.push_back(ScheduleOp::forget(0, g.dnodes[d].id));
    }
    return s;
}

}  // namespace remat

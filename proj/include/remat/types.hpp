#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace remat {

// Sizes are integer bytes, times integer microseconds. All arithmetic on
// schedules and budgets stays exact.
using Bytes = std::int64_t;
using Micros = std::int64_t;

// ---------------------------------------------------------------------------
// Forward graph (the pre-measurement view used by the partitioner)
// ---------------------------------------------------------------------------

struct ForwardNode {
    std::string id;
    std::string op_signature;
    std::vector<std::int64_t> output_shape;
    std::string param_signature;
    std::vector<std::string> predecessors;

    bool operator==(const ForwardNode&) const = default;
};

struct ForwardGraph {
    std::vector<ForwardNode> nodes;  // stored order is a topological order
    std::vector<std::string> input_ids;
    std::string output_id;

    bool operator==(const ForwardGraph&) const = default;

    int index_of(const std::string& id) const {
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
            if (nodes[i].id == id) return i;
        return -1;
    }
};

// ---------------------------------------------------------------------------
// CD graph (computation/data bipartite DAG for one block, fwd + bwd)
// ---------------------------------------------------------------------------

enum class CNodeKind { Forward, Backward, Loss };
enum class DNodeKind { Data, Grad, Phantom };

struct CNode {
    std::string id;
    CNodeKind kind = CNodeKind::Forward;
    Micros time = 0;
    Bytes tmp_mem = 0;
    std::vector<int> deps;     // dnode indices (real dependencies)
    std::vector<int> outputs;  // dnode indices

    bool operator==(const CNode&) const = default;
};

struct DNode {
    std::string id;
    Bytes size = 0;
    DNodeKind kind = DNodeKind::Data;
    std::vector<int> parents;  // cnode indices contributing to this tensor

    bool operator==(const DNode&) const = default;
};

struct CDGraph {
    std::vector<CNode> cnodes;  // stored order is the fixed topological order
    std::vector<DNode> dnodes;
    int input_data = -1;
    int output_data = -1;
    int loss_index = -1;  // position of the Loss cnode in the order

    bool operator==(const CDGraph& o) const {
        return cnodes == o.cnodes && dnodes == o.dnodes &&
               input_data == o.input_data && output_data == o.output_data &&
               loss_index == o.loss_index;
    }

    int cnode_index(const std::string& id) const {
        for (int i = 0; i < static_cast<int>(cnodes.size()); ++i)
            if (cnodes[i].id == id) return i;
        return -1;
    }
    int dnode_index(const std::string& id) const {
        for (int i = 0; i < static_cast<int>(dnodes.size()); ++i)
            if (dnodes[i].id == id) return i;
        return -1;
    }

    Bytes input_size() const { return dnodes[input_data].size; }
    Bytes output_size() const { return dnodes[output_data].size; }

    // The gradient the loss creates for the block output.
    int output_grad() const {
        if (loss_index < 0 || cnodes[loss_index].outputs.empty()) return -1;
        return cnodes[loss_index].outputs.front();
    }

    // Dnodes with no consumer inside the block (the deliverable gradients).
    std::vector<int> sink_dnodes() const {
        std::vector<char> consumed(dnodes.size(), 0);
        for (const CNode& c : cnodes)
            for (int d : c.deps) consumed[d] = 1;
        std::vector<int> out;
        for (int d = 0; d < static_cast<int>(dnodes.size()); ++d)
            if (!consumed[d]) out.push_back(d);
        return out;
    }

    // The single sink Grad dnode (the input gradient), -1 if not unique.
    int input_grad() const {
        int found = -1;
        for (int d : sink_dnodes()) {
            if (dnodes[d].kind != DNodeKind::Grad) continue;
            if (found >= 0) return -1;
            found = d;
        }
        return found;
    }
};

// Edge sets of Appendix-style bookkeeping, derived from a CDGraph.
struct EdgeSets {
    std::vector<std::pair<int, int>> children_of_comp;   // (cnode, dnode)
    std::vector<std::vector<int>> parents_of_data;       // dnode -> cnodes
    std::vector<std::vector<int>> children_of_data;      // dnode -> cnodes
};

inline EdgeSets derive_edge_sets(const CDGraph& g) {
    EdgeSets e;
    e.parents_of_data.resize(g.dnodes.size());
    e.children_of_data.resize(g.dnodes.size());
    for (int c = 0; c < static_cast<int>(g.cnodes.size()); ++c) {
        for (int d : g.cnodes[c].outputs) e.children_of_comp.emplace_back(c, d);
        for (int d : g.cnodes[c].deps) e.children_of_data[d].push_back(c);
    }
    for (int d = 0; d < static_cast<int>(g.dnodes.size()); ++d)
        e.parents_of_data[d] = g.dnodes[d].parents;
    return e;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
    std::string rule;
    std::string detail;
};

inline std::vector<Violation> validate_cdgraph(const CDGraph& g) {
    std::vector<Violation> out;
    auto bad = [&](const std::string& rule, const std::string& detail) {
        out.push_back({rule, detail});
    };
    const int T = static_cast<int>(g.cnodes.size());
    const int D = static_cast<int>(g.dnodes.size());

    std::unordered_set<std::string> seen;
    for (const CNode& c : g.cnodes)
        if (!seen.insert(c.id).second) bad("unique-ids", "duplicate cnode id " + c.id);
    seen.clear();
    for (const DNode& d : g.dnodes)
        if (!seen.insert(d.id).second) bad("unique-ids", "duplicate dnode id " + d.id);

    auto cnode_ok = [&](int i) { return i >= 0 && i < T; };
    auto dnode_ok = [&](int i) { return i >= 0 && i < D; };

    for (int c = 0; c < T; ++c) {
        for (int d : g.cnodes[c].deps)
            if (!dnode_ok(d)) bad("ref", "cnode " + g.cnodes[c].id + " dep out of range");
        for (int d : g.cnodes[c].outputs)
            if (!dnode_ok(d)) bad("ref", "cnode " + g.cnodes[c].id + " output out of range");
    }
    for (int d = 0; d < D; ++d) {
        for (int p : g.dnodes[d].parents)
            if (!cnode_ok(p)) bad("ref", "dnode " + g.dnodes[d].id + " parent out of range");
        if (g.dnodes[d].size < 0) bad("size", "dnode " + g.dnodes[d].id + " has negative size");
    }
    if (!dnode_ok(g.input_data)) bad("ref", "input_data out of range");
    if (!dnode_ok(g.output_data)) bad("ref", "output_data out of range");
    if (!cnode_ok(g.loss_index)) bad("ref", "loss_index out of range");
    if (!out.empty()) return out;  // index errors poison everything below

    // parents lists must mirror cnode outputs
    for (int c = 0; c < T; ++c)
        for (int d : g.cnodes[c].outputs) {
            const auto& ps = g.dnodes[d].parents;
            if (std::find(ps.begin(), ps.end(), c) == ps.end())
                bad("edge-mirror", "dnode " + g.dnodes[d].id + " missing parent " + g.cnodes[c].id);
        }
    for (int d = 0; d < D; ++d)
        for (int p : g.dnodes[d].parents) {
            const auto& os = g.cnodes[p].outputs;
            if (std::find(os.begin(), os.end(), d) == os.end())
                bad("edge-mirror", "cnode " + g.cnodes[p].id + " missing output " + g.dnodes[d].id);
        }

    int losses = 0;
    for (int c = 0; c < T; ++c)
        if (g.cnodes[c].kind == CNodeKind::Loss) ++losses;
    if (losses != 1) bad("loss-unique", "graph has " + std::to_string(losses) + " loss nodes");
    else if (g.cnodes[g.loss_index].kind != CNodeKind::Loss)
        bad("loss-unique", "loss_index does not point at the Loss node");

    const CNode& loss = g.cnodes[g.loss_index];
    if (loss.kind == CNodeKind::Loss) {
        if (loss.time != 0) bad("loss-time", "loss node has time " + std::to_string(loss.time));
        if (loss.tmp_mem != 0) bad("loss-tmp", "loss node has tmp_mem");
        if (loss.deps.size() != 1 || (g.output_data >= 0 && loss.deps[0] != g.output_data))
            bad("loss-deps", "loss must consume exactly the block output");
        if (loss.outputs.size() != 1) bad("loss-outputs", "loss must produce exactly one grad");
    }
    for (int c = 0; c < T; ++c) {
        if (g.cnodes[c].kind != CNodeKind::Loss && g.cnodes[c].outputs.empty())
            bad("outputs-nonempty", "cnode " + g.cnodes[c].id + " has no outputs");
        if (g.cnodes[c].time < 0) bad("time", "cnode " + g.cnodes[c].id + " negative time");
        if (g.cnodes[c].tmp_mem < 0) bad("tmp", "cnode " + g.cnodes[c].id + " negative tmp_mem");
        if (g.cnodes[c].kind == CNodeKind::Forward && c > g.loss_index)
            bad("phase-order", "forward " + g.cnodes[c].id + " after the loss");
        if (g.cnodes[c].kind == CNodeKind::Backward && c < g.loss_index)
            bad("phase-order", "backward " + g.cnodes[c].id + " before the loss");
    }

    // Stated order must be topological: every parent of a consumed dnode
    // precedes all of its consumers (the conservative multi-parent reading).
    for (int c = 0; c < T; ++c)
        for (int d : g.cnodes[c].deps)
            for (int p : g.dnodes[d].parents)
                if (p >= c)
                    bad("topo-order", "cnode " + g.cnodes[c].id + " consumes " +
                                          g.dnodes[d].id + " before parent " + g.cnodes[p].id);
    for (int d = 0; d < D; ++d) {
        if (g.dnodes[d].parents.empty() && d != g.input_data)
            bad("parentless", "dnode " + g.dnodes[d].id + " has no parent and is not the input");
        if (g.dnodes[d].kind == DNodeKind::Phantom) {
            if (g.dnodes[d].parents.size() != 1)
                bad("phantom-degree", "phantom " + g.dnodes[d].id + " needs exactly one parent");
            int consumers = 0;
            for (const CNode& c : g.cnodes)
                for (int dep : c.deps)
                    if (dep == d) ++consumers;
            if (consumers != 1)
                bad("phantom-degree", "phantom " + g.dnodes[d].id + " needs exactly one consumer");
        }
    }
    if (!g.dnodes.empty() && g.input_data >= 0 && !g.dnodes[g.input_data].parents.empty())
        bad("input-parentless", "input_data must have no parents");
    return out;
}

// ---------------------------------------------------------------------------
// Chain of blocks
// ---------------------------------------------------------------------------

struct Chain {
    std::vector<CDGraph> blocks;
    std::vector<int> equiv_class;  // per-block class index

    int length() const { return static_cast<int>(blocks.size()); }

    // a_i: block i's input size for i < L, the final output size for i = L.
    Bytes act_size(int i) const {
        if (i < length()) return blocks[i].input_size();
        return blocks.back().output_size();
    }
};

// Violations across block seams and per block.
inline std::vector<Violation> validate_chain(const Chain& chain) {
    std::vector<Violation> out;
    const int L = chain.length();
    if (L == 0) {
        out.push_back({"empty-chain", "chain has no blocks"});
        return out;
    }
    for (int i = 0; i < L; ++i) {
        for (const Violation& v : validate_cdgraph(chain.blocks[i]))
            out.push_back({v.rule, "block " + std::to_string(i) + ": " + v.detail});
    }
    if (!out.empty()) return out;
    for (int i = 0; i + 1 < L; ++i) {
        if (chain.blocks[i].output_size() != chain.blocks[i + 1].input_size())
            out.push_back({"seam-size",
                           "block " + std::to_string(i) + " output " +
                               std::to_string(chain.blocks[i].output_size()) + " != block " +
                               std::to_string(i + 1) + " input " +
                               std::to_string(chain.blocks[i + 1].input_size())});
    }
    for (int i = 0; i < L; ++i) {
        const CDGraph& g = chain.blocks[i];
        int ig = g.input_grad();
        if (ig < 0) {
            out.push_back({"grad-sink",
                           "block " + std::to_string(i) + " must have exactly one sink grad"});
            continue;
        }
        if (g.dnodes[ig].size != g.input_size())
            out.push_back({"grad-size", "block " + std::to_string(i) +
                                            " input grad size != input size"});
        int og = g.output_grad();
        if (og >= 0 && g.dnodes[og].size != g.output_size())
            out.push_back({"grad-size", "block " + std::to_string(i) +
                                            " output grad size != output size"});
    }
    if (static_cast<int>(chain.equiv_class.size()) != L)
        out.push_back({"equiv-class", "equiv_class must cover every block"});
    return out;
}

// ---------------------------------------------------------------------------
// Block options and schedules
// ---------------------------------------------------------------------------

// One compute/forget action inside a single block, by node index.
struct BlockLocalOp {
    enum Kind { Compute, Forget } kind = Compute;
    int node = -1;  // cnode index for Compute, dnode index for Forget

    bool operator==(const BlockLocalOp&) const = default;
};

struct BlockOption {
    int option_id = 0;  // 0 is reserved for the no-save forward
    Micros time_fwd = 0;
    std::optional<Micros> time_bwd;  // absent for option 0
    Bytes save_mem = 0;   // retained across the fwd/bwd boundary (incl. input)
    Bytes peak_fwd = 0;   // simulated peak of fwd_ops from {input}
    Bytes peak_fwd_pre = 0;  // same, with the output pre-resident
    Bytes peak_bwd = 0;   // simulated peak of bwd_ops from {boundary set, out grad}
    std::vector<BlockLocalOp> fwd_ops;
    std::vector<BlockLocalOp> bwd_ops;

    bool has_bwd() const { return time_bwd.has_value(); }
    Micros total_time() const { return time_fwd + time_bwd.value_or(0); }
    bool operator==(const BlockOption&) const = default;
};

struct ScheduleOp {
    enum Kind { Compute, Forget, BlockFwd, BlockBwd } kind = Compute;
    int block = -1;
    std::string target;  // node id for Compute/Forget
    int option = -1;     // option id for BlockFwd/BlockBwd

    static ScheduleOp compute(int block, std::string id) {
        return {Compute, block, std::move(id), -1};
    }
    static ScheduleOp forget(int block, std::string id) {
        return {Forget, block, std::move(id), -1};
    }
    static ScheduleOp block_fwd(int block, int option) { return {BlockFwd, block, {}, option}; }
    static ScheduleOp block_bwd(int block, int option) { return {BlockBwd, block, {}, option}; }

    bool operator==(const ScheduleOp&) const = default;
};

struct ScheduleMeta {
    Bytes budget = 0;
    Micros makespan = 0;
    Bytes peak = 0;

    bool operator==(const ScheduleMeta&) const = default;
};

struct Schedule {
    std::vector<ScheduleOp> ops;
    std::optional<ScheduleMeta> meta;

    bool operator==(const Schedule&) const = default;
};

}  // namespace remat

#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "remat/errors.hpp"
#include "remat/types.hpp"

namespace remat {

using SeparatorList = std::vector<std::string>;

struct BlockClass {
    int class_id = 0;
    int representative = 0;        // block index
    std::vector<int> members;      // block indices
    // per member: anonymized id of each node, in block order
    std::vector<std::vector<std::string>> anonymization;
};

namespace detail {

inline std::vector<std::vector<int>> undirected_adjacency(const ForwardGraph& g) {
    std::unordered_map<std::string, int> pos;
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) pos[g.nodes[i].id] = i;
    std::vector<std::vector<int>> adj(g.nodes.size());
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i)
        for (const std::string& p : g.nodes[i].predecessors) {
            int j = pos.at(p);
            adj[i].push_back(j);
            adj[j].push_back(i);
        }
    return adj;
}

// reachable node count from `start`, skipping `removed`
inline int flood_count(const std::vector<std::vector<int>>& adj, int start, int removed) {
    std::vector<char> seen(adj.size(), 0);
    std::vector<int> stack{start};
    seen[start] = 1;
    int n = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v]) {
            if (w == removed || seen[w]) continue;
            seen[w] = 1;
            ++n;
            stack.push_back(w);
        }
    }
    return n;
}

}  // namespace detail

// 1-separators of the forward graph: internal nodes whose removal disconnects
// the undirected view, and which no edge jumps over (a jumped node cannot cut
// the graph into a sequence of blocks). Sorted by topological position.
inline SeparatorList find_separators(const ForwardGraph& g) {
    const int n = static_cast<int>(g.nodes.size());
    if (n == 0) return {};
    auto adj = detail::undirected_adjacency(g);
    if (detail::flood_count(adj, 0, -1) != n)
        throw DisconnectedInput("forward graph is not weakly connected");

    std::unordered_map<std::string, int> pos;
    for (int i = 0; i < n; ++i) pos[g.nodes[i].id] = i;

    std::vector<char> excluded(n, 0);
    for (const std::string& in : g.input_ids) excluded[pos.at(in)] = 1;
    excluded[pos.at(g.output_id)] = 1;

    // longest edge span over each position
    std::vector<char> jumped(n, 0);
    for (int i = 0; i < n; ++i)
        for (const std::string& p : g.nodes[i].predecessors) {
            int j = pos.at(p);
            for (int k = j + 1; k < i; ++k) jumped[k] = 1;
        }

    SeparatorList out;
    for (int i = 0; i < n; ++i) {
        if (excluded[i] || jumped[i]) continue;
        int start = i == 0 ? 1 : 0;
        if (detail::flood_count(adj, start, i) != n - 1) out.push_back(g.nodes[i].id);
    }
    return out;
}

// Cut the graph at the separators. Block k holds every node strictly between
// separator k-1 and k plus both boundary separators; a separator is the output
// of one block and the input of the next.
inline std::vector<ForwardGraph> cut_into_blocks(const ForwardGraph& g,
                                                 const SeparatorList& seps) {
    std::unordered_map<std::string, int> pos;
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) pos[g.nodes[i].id] = i;
    std::vector<int> cut_positions;
    for (const std::string& s : seps) cut_positions.push_back(pos.at(s));
    std::sort(cut_positions.begin(), cut_positions.end());

    std::vector<ForwardGraph> blocks;
    int lo = 0;
    auto emit = [&](int hi, bool first, bool last) {
        ForwardGraph b;
        for (int i = lo; i <= hi; ++i) {
            ForwardNode n = g.nodes[i];
            if (i == lo && !first) n.predecessors.clear();  // boundary input
            b.nodes.push_back(std::move(n));
        }
        for (int i = lo; i <= hi; ++i)
            for (const std::string& p : g.nodes[i].predecessors)
                if (i != lo || first) {
                    int pp = pos.at(p);
                    if (pp < lo || pp > hi)
                        throw ValidationError("edge " + p + " -> " + g.nodes[i].id +
                                              " crosses a block boundary");
                }
        b.input_ids = first ? g.input_ids : std::vector<std::string>{g.nodes[lo].id};
        b.output_id = last ? g.output_id : g.nodes[hi].id;
        blocks.push_back(std::move(b));
    };
    for (size_t k = 0; k < cut_positions.size(); ++k) {
        emit(cut_positions[k], lo == 0, false);
        lo = cut_positions[k];
    }
    emit(static_cast<int>(g.nodes.size()) - 1, lo == 0, true);
    return blocks;
}

// Rename ids to consecutive integers by topological position and parameter
// signatures by first occurrence. Idempotent; structure and shapes unchanged.
inline ForwardGraph anonymize(const ForwardGraph& b) {
    ForwardGraph out;
    std::unordered_map<std::string, std::string> id_map, param_map;
    int next_param = 1;
    for (int i = 0; i < static_cast<int>(b.nodes.size()); ++i)
        id_map[b.nodes[i].id] = std::to_string(i + 1);
    for (const ForwardNode& n : b.nodes) {
        ForwardNode m;
        m.id = id_map.at(n.id);
        m.op_signature = n.op_signature;
        m.output_shape = n.output_shape;
        if (n.param_signature.empty()) {
            m.param_signature = "";
        } else {
            auto it = param_map.find(n.param_signature);
            if (it == param_map.end())
                it = param_map.emplace(n.param_signature, "p" + std::to_string(next_param++))
                         .first;
            m.param_signature = it->second;
        }
        for (const std::string& p : n.predecessors) m.predecessors.push_back(id_map.at(p));
        out.nodes.push_back(std::move(m));
    }
    for (const std::string& in : b.input_ids) out.input_ids.push_back(id_map.at(in));
    out.output_id = id_map.at(b.output_id);
    return out;
}

// Node-by-node equality of anonymized blocks along the shared order.
inline bool blocks_equal(const ForwardGraph& b1, const ForwardGraph& b2) {
    return b1 == b2;
}

inline std::vector<BlockClass> group_identical(const std::vector<ForwardGraph>& blocks) {
    std::vector<BlockClass> classes;
    std::vector<ForwardGraph> anon;
    anon.reserve(blocks.size());
    for (const ForwardGraph& b : blocks) anon.push_back(anonymize(b));
    for (int i = 0; i < static_cast<int>(blocks.size()); ++i) {
        bool placed = false;
        for (BlockClass& c : classes) {
            if (blocks_equal(anon[c.representative], anon[i])) {
                c.members.push_back(i);
                placed = true;
                break;
            }
        }
        if (!placed) {
            BlockClass c;
            c.class_id = static_cast<int>(classes.size());
            c.representative = i;
            c.members = {i};
            classes.push_back(std::move(c));
        }
    }
    for (BlockClass& c : classes)
        for (int m : c.members) {
            std::vector<std::string> names;
            for (const ForwardNode& n : anon[m].nodes) names.push_back(n.id);
            c.anonymization.push_back(std::move(names));
        }
    return classes;
}

// Positional isomorphism of measured blocks: same structure, kinds, times,
// sizes and wiring, ids ignored. Used to verify equivalence-class claims.
inline bool cdgraphs_equal(const CDGraph& a, const CDGraph& b) {
    if (a.cnodes.size() != b.cnodes.size() || a.dnodes.size() != b.dnodes.size()) return false;
    if (a.input_data != b.input_data || a.output_data != b.output_data ||
        a.loss_index != b.loss_index)
        return false;
    for (size_t i = 0; i < a.cnodes.size(); ++i) {
        const CNode& x = a.cnodes[i];
        const CNode& y = b.cnodes[i];
        if (x.kind != y.kind || x.time != y.time || x.tmp_mem != y.tmp_mem ||
            x.deps != y.deps || x.outputs != y.outputs)
            return false;
    }
    for (size_t i = 0; i < a.dnodes.size(); ++i) {
        const DNode& x = a.dnodes[i];
        const DNode& y = b.dnodes[i];
        if (x.kind != y.kind || x.size != y.size || x.parents != y.parents) return false;
    }
    return true;
}

// Group chain blocks into equivalence classes by positional isomorphism.
inline std::vector<int> group_chain_blocks(const Chain& chain) {
    std::vector<int> cls(chain.length(), -1);
    std::vector<int> reps;
    for (int i = 0; i < chain.length(); ++i) {
        for (size_t r = 0; r < reps.size(); ++r)
            if (cdgraphs_equal(chain.blocks[reps[r]], chain.blocks[i])) {
                cls[i] = static_cast<int>(r);
                break;
            }
        if (cls[i] < 0) {
            cls[i] = static_cast<int>(reps.size());
            reps.push_back(i);
        }
    }
    return cls;
}

// Verify a claimed class assignment: same class must mean isomorphic blocks.
inline void verify_equiv_classes(const Chain& chain) {
    std::unordered_map<int, int> first_member;
    for (int i = 0; i < chain.length(); ++i) {
        auto [it, fresh] = first_member.emplace(chain.equiv_class[i], i);
        if (!fresh && !cdgraphs_equal(chain.blocks[it->second], chain.blocks[i]))
            throw ValidationError("blocks " + std::to_string(it->second) + " and " +
                                  std::to_string(i) +
                                  " claim the same equivalence class but differ");
    }
}

}  // namespace remat

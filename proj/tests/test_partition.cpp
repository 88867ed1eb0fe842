#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "remat/ingest.hpp"
#include "remat/partition.hpp"
#include "test_helpers.hpp"

using namespace remat;

namespace {

ForwardNode fnode(std::string id, std::string op, std::vector<std::int64_t> shape,
                  std::string param, std::vector<std::string> preds) {
    ForwardNode n;
    n.id = std::move(id);
    n.op_signature = std::move(op);
    n.output_shape = std::move(shape);
    n.param_signature = std::move(param);
    n.predecessors = std::move(preds);
    return n;
}

ForwardGraph path_abc() {
    ForwardGraph g;
    g.nodes.push_back(fnode("a", "input", {8}, "", {}));
    g.nodes.push_back(fnode("b", "linear", {8}, "w1", {"a"}));
    g.nodes.push_back(fnode("c", "relu", {8}, "", {"b"}));
    g.input_ids = {"a"};
    g.output_id = "c";
    return g;
}

// a->b, a->c, b->d, c->d, d->e
ForwardGraph diamond_tail() {
    ForwardGraph g;
    g.nodes.push_back(fnode("a", "input", {4}, "", {}));
    g.nodes.push_back(fnode("b", "left", {4}, "w1", {"a"}));
    g.nodes.push_back(fnode("c", "right", {4}, "w2", {"a"}));
    g.nodes.push_back(fnode("d", "add", {4}, "", {"b", "c"}));
    g.nodes.push_back(fnode("e", "relu", {4}, "", {"d"}));
    g.input_ids = {"a"};
    g.output_id = "e";
    return g;
}

// independent oracle: a node separates iff removing it leaves some pair of
// remaining nodes unreachable from each other in the undirected view
bool separates(const ForwardGraph& g, const std::string& id) {
    int n = static_cast<int>(g.nodes.size());
    std::unordered_map<std::string, int> pos;
    for (int i = 0; i < n; ++i) pos[g.nodes[i].id] = i;
    int removed = pos.at(id);
    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i)
        for (const std::string& p : g.nodes[i].predecessors) {
            adj[i].push_back(pos.at(p));
            adj[pos.at(p)].push_back(i);
        }
    int start = removed == 0 ? 1 : 0;
    std::vector<char> seen(n, 0);
    seen[start] = 1;
    std::vector<int> stack{start};
    int count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (w != removed && !seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    return count != n - 1;
}

}  // namespace

TEST_CASE("path separators") {
    CHECK(find_separators(path_abc()) == SeparatorList{"b"});
}

TEST_CASE("diamond separators via exhaustive removal") {
    ForwardGraph g = diamond_tail();
    // oracle over all five nodes: only d disconnects
    std::vector<std::string> expect;
    for (const ForwardNode& n : g.nodes)
        if (n.id != "a" && n.id != "e" && separates(g, n.id)) expect.push_back(n.id);
    CHECK(expect == std::vector<std::string>{"d"});
    CHECK(find_separators(g) == SeparatorList{"d"});
}

TEST_CASE("single edge has no internal separators") {
    ForwardGraph g;
    g.nodes.push_back(fnode("a", "input", {4}, "", {}));
    g.nodes.push_back(fnode("b", "linear", {4}, "w", {"a"}));
    g.input_ids = {"a"};
    g.output_id = "b";
    CHECK(find_separators(g).empty());
}

TEST_CASE("disconnected input raises") {
    ForwardGraph g;
    g.nodes.push_back(fnode("a", "input", {4}, "", {}));
    g.nodes.push_back(fnode("b", "orphan", {4}, "", {}));
    g.nodes.push_back(fnode("c", "relu", {4}, "", {"a"}));
    g.input_ids = {"a"};
    g.output_id = "c";
    CHECK_THROWS_AS(find_separators(g), DisconnectedInput);
}

TEST_CASE("jumped articulation points are not cut points") {
    // a->b->c->d with a long edge b->d: c disconnects nothing... and b is
    // jumped by nothing, so b is the only separator
    ForwardGraph g;
    g.nodes.push_back(fnode("a", "input", {4}, "", {}));
    g.nodes.push_back(fnode("b", "n1", {4}, "", {"a"}));
    g.nodes.push_back(fnode("c", "n2", {4}, "", {"b"}));
    g.nodes.push_back(fnode("d", "n3", {4}, "", {"c", "b"}));
    g.nodes.push_back(fnode("e", "n4", {4}, "", {"d"}));
    g.input_ids = {"a"};
    g.output_id = "e";
    // c is an articulation point of nothing (b->d bypasses it); b and d cut
    CHECK(find_separators(g) == SeparatorList({"b", "d"}));
}

TEST_CASE("cut path into two blocks sharing the separator") {
    ForwardGraph g = path_abc();
    auto blocks = cut_into_blocks(g, {"b"});
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].nodes.size() == 2);
    CHECK(blocks[1].nodes.size() == 2);
    CHECK(blocks[0].output_id == "b");
    CHECK(blocks[1].input_ids == std::vector<std::string>{"b"});
    CHECK(blocks[1].output_id == "c");
    validate_forward_graph(blocks[0]);
    validate_forward_graph(blocks[1]);
}

TEST_CASE("cut diamond+tail") {
    ForwardGraph g = diamond_tail();
    auto blocks = cut_into_blocks(g, find_separators(g));
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].nodes.size() == 4);
    CHECK(blocks[1].nodes.size() == 2);
}

TEST_CASE("no separators leaves a single block") {
    ForwardGraph g = diamond_tail();
    auto blocks = cut_into_blocks(g, {});
    REQUIRE(blocks.size() == 1);
    CHECK(blocks[0] == g);
}

TEST_CASE("anonymize renames ids and params consistently") {
    ForwardGraph g;
    g.nodes.push_back(fnode("x7", "linear", {8}, "weights.layer3", {}));
    g.nodes.push_back(fnode("x9", "relu", {8}, "", {"x7"}));
    g.input_ids = {"x7"};
    g.output_id = "x9";
    ForwardGraph a = anonymize(g);
    CHECK(a.nodes[0].id == "1");
    CHECK(a.nodes[1].id == "2");
    CHECK(a.nodes[1].predecessors == std::vector<std::string>{"1"});
    CHECK(a.nodes[0].param_signature == "p1");
    CHECK(a.nodes[0].op_signature == "linear");
    CHECK(anonymize(a) == a);  // idempotent
}

TEST_CASE("structurally identical blocks anonymize identically") {
    ForwardGraph g1, g2;
    g1.nodes.push_back(fnode("u1", "linear", {512}, "enc.w1", {}));
    g1.nodes.push_back(fnode("u2", "relu", {512}, "", {"u1"}));
    g1.input_ids = {"u1"};
    g1.output_id = "u2";
    g2.nodes.push_back(fnode("v5", "linear", {512}, "dec.w9", {}));
    g2.nodes.push_back(fnode("v6", "relu", {512}, "", {"v5"}));
    g2.input_ids = {"v5"};
    g2.output_id = "v6";
    CHECK(blocks_equal(anonymize(g1), anonymize(g2)));
    g2.nodes[0].output_shape = {1024};
    CHECK_FALSE(blocks_equal(anonymize(g1), anonymize(g2)));
}

TEST_CASE("wiring differences are caught") {
    // two 3-node blocks differing only in one predecessor edge
    ForwardGraph g1, g2;
    for (ForwardGraph* g : {&g1, &g2}) {
        g->nodes.push_back(fnode("a", "input", {4}, "", {}));
        g->nodes.push_back(fnode("b", "mul", {4}, "", {"a"}));
        g->input_ids = {"a"};
        g->output_id = "c";
    }
    g1.nodes.push_back(fnode("c", "add", {4}, "", {"a", "b"}));
    g2.nodes.push_back(fnode("c", "add", {4}, "", {"b", "b"}));
    CHECK_FALSE(blocks_equal(anonymize(g1), anonymize(g2)));
}

TEST_CASE("blocks_equal is an equivalence relation") {
    std::mt19937 rng(77);
    std::vector<ForwardGraph> pool;
    for (int i = 0; i < 8; ++i) {
        ForwardGraph g;
        int n = std::uniform_int_distribution<int>(2, 4)(rng);
        for (int k = 0; k < n; ++k) {
            std::vector<std::string> preds;
            if (k > 0) preds.push_back("n" + std::to_string(k - 1));
            int op = std::uniform_int_distribution<int>(0, 2)(rng);
            g.nodes.push_back(fnode("n" + std::to_string(k),
                                    op == 0   ? "linear"
                                    : op == 1 ? "relu"
                                              : "norm",
                                    {4 << op}, op == 0 ? "w" + std::to_string(k) : "",
                                    std::move(preds)));
        }
        g.input_ids = {"n0"};
        g.output_id = g.nodes.back().id;
        pool.push_back(anonymize(g));
    }
    for (const auto& a : pool) CHECK(blocks_equal(a, a));
    for (const auto& a : pool)
        for (const auto& b : pool) CHECK(blocks_equal(a, b) == blocks_equal(b, a));
    for (const auto& a : pool)
        for (const auto& b : pool)
            for (const auto& c : pool)
                if (blocks_equal(a, b) && blocks_equal(b, c)) CHECK(blocks_equal(a, c));
}

TEST_CASE("grouping an alternating chain yields two classes") {
    ForwardGraph a1, b1;
    a1.nodes.push_back(fnode("x", "attn", {8}, "wq", {}));
    a1.nodes.push_back(fnode("y", "proj", {8}, "wo", {"x"}));
    a1.input_ids = {"x"};
    a1.output_id = "y";
    b1.nodes.push_back(fnode("x", "mlp", {8}, "w1", {}));
    b1.nodes.push_back(fnode("y", "mlp2", {8}, "w2", {"x"}));
    b1.input_ids = {"x"};
    b1.output_id = "y";
    std::vector<ForwardGraph> blocks{a1, b1, a1, b1, a1, b1};
    auto classes = group_identical(blocks);
    REQUIRE(classes.size() == 2);
    CHECK(classes[0].members == std::vector<int>{0, 2, 4});
    CHECK(classes[1].members == std::vector<int>{1, 3, 5});
}

TEST_CASE("all-distinct blocks give singleton classes") {
    std::vector<ForwardGraph> blocks;
    for (int i = 0; i < 4; ++i) {
        ForwardGraph g;
        g.nodes.push_back(fnode("a", "op" + std::to_string(i), {4}, "", {}));
        g.nodes.push_back(fnode("b", "relu", {4}, "", {"a"}));
        g.input_ids = {"a"};
        g.output_id = "b";
        blocks.push_back(g);
    }
    auto classes = group_identical(blocks);
    CHECK(classes.size() == 4);
}

TEST_CASE("cutting then concatenating recovers the node sequence") {
    ForwardGraph g = diamond_tail();
    auto blocks = cut_into_blocks(g, find_separators(g));
    std::vector<std::string> ids;
    for (size_t k = 0; k < blocks.size(); ++k)
        for (size_t i = k == 0 ? 0 : 1; i < blocks[k].nodes.size(); ++i)
            ids.push_back(blocks[k].nodes[i].id);
    std::vector<std::string> expect;
    for (const ForwardNode& n : g.nodes) expect.push_back(n.id);
    CHECK(ids == expect);
}

TEST_CASE("cdgraph positional isomorphism ignores ids") {
    CDGraph a = testing::toy_block();
    CDGraph b = testing::toy_block();
    for (auto& d : b.dnodes) d.id = "x_" + d.id;
    for (auto& c : b.cnodes) c.id = "x_" + c.id;
    CHECK(cdgraphs_equal(a, b));
    b.cnodes[0].time += 1;
    CHECK_FALSE(cdgraphs_equal(a, b));
}

TEST_CASE("claimed equivalence classes are re-verified") {
    Chain chain;
    chain.blocks.push_back(testing::toy_block());
    chain.blocks.push_back(testing::toy_block());
    chain.blocks[1].cnodes[0].time = 99;
    chain.equiv_class = {0, 0};
    CHECK_THROWS_AS(verify_equiv_classes(chain), ValidationError);
    chain.equiv_class = {0, 1};
    CHECK_NOTHROW(verify_equiv_classes(chain));
}

use std::collections::BTreeSet;
use std::sync::Arc;

use chainflow_core::chain::{replay_main, Block, Chain, ChainEvent, NotOnMainBranch};
use chainflow_core::engine::{ActionsEngine, AnyEngine, Design, WorkflowEngine};
use chainflow_core::node::Node;
use chainflow_core::p2p::Message;
use chainflow_core::crypto::NodeIdentity;
use chainflow_core::testkit::ExampleChain;

fn members(x: &ExampleChain) -> chainflow_core::chain::Members {
    x.miners.iter().map(|n| (n.to_string(), NodeIdentity::for_name(n).public_key())).collect()
}

fn chain(x: &ExampleChain) -> Chain<ActionsEngine> {
    Chain::new(&x.network_id, x.difficulty, members(x), ActionsEngine::new())
}

fn feed(c: &mut Chain<ActionsEngine>, x: &ExampleChain, names: &[&str]) -> Vec<ChainEvent> {
    let mut events = Vec::new();
    for n in names {
        events.extend(c.receive_block(x.block(n).clone()).unwrap().events);
    }
    events
}

#[test]
fn depth_two_confirms_block_two_transactions() {
    let x = ExampleChain::build(4);
    let mut c = chain(&x);
    let events = feed(&mut c, &x, &["1", "2", "3", "4"]);
    assert_eq!(events.iter().filter(|e| matches!(e, ChainEvent::HeadAdvanced { .. })).count(), 4);
    assert_eq!(c.confirmation_depth(&x.block("2").block_hash), Ok(2));
    assert_eq!(c.confirmation_depth(&x.block("1").block_hash), Ok(3));
    assert_eq!(c.confirmation_depth(&x.block("4").block_hash), Ok(0));
    for t in ["Tx21", "Tx22", "Tx23"] {
        assert_eq!(c.store().tx_depth(&x.txs[t].id()), Some(2), "{t}");
    }
}

#[test]
fn longer_branch_reorganizes_and_returns_side_transactions() {
    let x = ExampleChain::build(4);
    let mut c = chain(&x);
    feed(&mut c, &x, &["1", "2b", "3b"]);
    for t in ["Tx21", "Tx23", "Tx31", "Tx33", "Tx41"] {
        assert_eq!(c.submit_transaction(x.txs[t].clone()), chainflow_core::chain::SubmitResult::Accepted, "{t}");
    }
    // Block 2 and 3 only tie the head: stored silently.
    assert!(feed(&mut c, &x, &["2", "3"]).is_empty());
    assert_eq!(c.head(), x.block("3b").block_hash);

    let out = c.receive_block(x.block("4").clone()).unwrap();
    let reorg = out
        .events
        .iter()
        .find_map(|e| match e {
            ChainEvent::Reorganized { undone, applied } => Some((undone.clone(), applied.clone())),
            _ => None,
        })
        .expect("reorganized");
    let hashes = |v: &[Arc<Block>]| v.iter().map(|b| b.block_hash).collect::<Vec<_>>();
    assert_eq!(hashes(&reorg.0), [x.block("3b").block_hash, x.block("2b").block_hash]);
    assert_eq!(hashes(&reorg.1), [x.block("2").block_hash, x.block("3").block_hash, x.block("4").block_hash]);

    let returned: BTreeSet<&str> = out.returned_to_pool.iter().map(|id| x.tx_name(id).unwrap()).collect();
    assert_eq!(returned, BTreeSet::from(["Tx21b", "Tx23b", "Tx31b", "Tx33b"]));
    let pool: BTreeSet<&str> = c.pool().iter().map(|t| x.tx_name(&t.id()).unwrap()).collect();
    assert_eq!(pool, BTreeSet::from(["Tx21b", "Tx23b", "Tx31b", "Tx33b"]));
    assert!(out.dropped.is_empty());

    assert_eq!(c.confirmation_depth(&x.block("3b").block_hash), Err(NotOnMainBranch));
    assert_eq!(c.get_predecessor(&x.block("4").block_hash).unwrap().block_hash, x.block("3").block_hash);
    assert!(c.get_predecessor(&c.store().genesis()).is_none());

    let fresh = replay_main(&c, ActionsEngine::new()).unwrap();
    assert_eq!(fresh.state_json(), c.engine().state_json());
}

#[test]
fn orphan_is_held_and_parent_requested() {
    let x = ExampleChain::build(4);
    let mut c = chain(&x);
    feed(&mut c, &x, &["1", "2", "3", "4"]);
    let out = c.receive_block(x.block("6").clone()).unwrap();
    assert!(matches!(&out.events[..], [ChainEvent::OrphanHeld { block }] if block.block_hash == x.block("6").block_hash));
    assert_eq!(out.missing_parents, [x.block("5").block_hash]);
    assert!(c.get_predecessor(&x.block("6").block_hash).is_none());

    let out = c.receive_block(x.block("5").clone()).unwrap();
    assert_eq!(out.stored, [x.block("5").block_hash, x.block("6").block_hash]);
    assert_eq!(c.head(), x.block("6").block_hash);
}

#[test]
fn node_requests_missing_parent_from_sender() {
    let x = ExampleChain::build(4);
    let mut node = Node::new(NodeIdentity::for_name("n1"), x.settings(Design::Actions));
    for n in ["1", "2", "3", "4"] {
        node.handle_message("n2", Message::BlockSend { block: x.block(n).clone() }).unwrap();
    }
    node.take_outbox();
    node.handle_message("n2", Message::BlockSend { block: x.block("6").clone() }).unwrap();
    let out = node.take_outbox();
    assert!(out
        .iter()
        .any(|o| o.to.as_deref() == Some("n2") && o.message == Message::BlockRequest { hash: x.block("5").block_hash }));
}

#[test]
fn serve_sync_answers() {
    let x = ExampleChain::build(4);
    let mut c = chain(&x);
    feed(&mut c, &x, &["1", "2", "3", "4"]);
    assert!(c.serve_chain(&c.head()).is_empty());
    let from_genesis: Vec<u64> = c.serve_chain(&c.store().genesis()).iter().map(|b| b.height).collect();
    assert_eq!(from_genesis, [1, 2, 3, 4]);
    let unknown = chainflow_core::crypto::digest(b"nowhere");
    assert_eq!(c.serve_chain(&unknown).len(), 4);
    let side = c.serve_chain(&x.block("2").block_hash);
    assert_eq!(side.iter().map(|b| b.height).collect::<Vec<_>>(), [3, 4]);
}

#[test]
fn bad_blocks_are_rejected() {
    let x = ExampleChain::build(4);
    let mut c = chain(&x);
    feed(&mut c, &x, &["1"]);
    let mut forged = x.block("2").clone();
    forged.nonce += 1;
    let out = c.receive_block(forged).unwrap();
    assert!(matches!(&out.events[..], [ChainEvent::BlockRejected { .. }]));

    // Block 3 replays Tx32 which block 2b also carries; on top of 2b that is fine,
    // but a block repeating a main-branch transaction is not.
    feed(&mut c, &x, &["2"]);
    let mut dup = x.block("3").clone();
    dup.transactions.push(x.txs["Tx21"].clone());
    let mut t = chainflow_core::chain::MiningTemplate::new(dup.prev_hash, dup.height, &dup.miner, dup.transactions);
    let dup = t.mine_step(x.difficulty, u64::MAX).unwrap();
    let out = c.receive_block(dup).unwrap();
    assert!(matches!(&out.events[..], [ChainEvent::BlockRejected { .. }]));
    assert_eq!(c.head(), x.block("2").block_hash);
}

#[test]
fn mining_on_empty_pool_extends_the_chain() {
    let x = ExampleChain::build(4);
    let mut node = Node::new(NodeIdentity::for_name("n1"), x.settings(Design::States));
    let before = node.chain().head_height();
    let hash = node.mine_block().unwrap();
    assert_eq!(node.chain().head_height(), before + 1);
    assert!(node.chain().store().block(&hash).unwrap().meets_difficulty(x.difficulty));
    let _ = AnyEngine::new(Design::States);
}

//! Shared builders for unit tests.

use std::sync::Arc;

use crate::connector::{assemble_block, BlockForming, PermissionRegistry, Role, Validator, DEFAULT_RETRY_BOUND};
use crate::crypto::{HashScheme, KeyPair};
use crate::types::{Address, ChainBlock, Transaction, TxType};

/// A materialized chain of `blocks` blocks after genesis, `txs` transactions each.
pub fn full_chain(scheme: HashScheme, blocks: u64, txs: u32) -> Vec<Arc<ChainBlock>> {
    let leader = KeyPair::from_seed(b"leader");
    let device = KeyPair::from_seed(b"device");
    let gw = Address::gateway(0);
    let mut reg = PermissionRegistry::new();
    reg.admit(gw, [Role::Submit]);
    let mut validator = Validator::new(gw, DEFAULT_RETRY_BOUND);
    let mut chain = vec![Arc::new(ChainBlock::genesis(scheme, true))];
    for h in 1..=blocks {
        let vtx: Vec<_> = (0..txs)
            .map(|i| {
                let tx = Transaction::sealed(
                    Address::device(i as u64),
                    gw,
                    TxType::Reading,
                    vec![i as u8; 4],
                    h.to_le_bytes().to_vec(),
                    h,
                    h as u32,
                    &device,
                    scheme,
                )
                .expect("sealed");
                Arc::new(validator.validate_transaction(&reg, gw, tx).expect("valid"))
            })
            .collect();
        let parent = chain.last().expect("genesis");
        let forming = BlockForming {
            parent: parent.header(),
            parent_height: parent.height(),
            max_txs: txs as usize,
            leader_key: &leader,
            hash_scheme: scheme,
        };
        let block = assemble_block(&vtx, &forming, h).expect("assembled");
        chain.push(Arc::new(ChainBlock::Full(block)));
    }
    chain
}

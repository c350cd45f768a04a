//! Feature-hashed query embeddings and how the builtin operator and model
//! profiles sit relative to a query.

use flowgate::allocator::OperatorCatalog;
use flowgate::embedding::{cosine, Embedder, HashingEmbedder};
use flowgate::router::ModelPool;

fn main() -> flowgate::Result<()> {
    let embedder = HashingEmbedder::new(384, 0);
    let queries = [
        "What is 17 + 25?",
        "What is 17 plus 25?",
        "Untangle the long and intricate arithmetic chain (3 * (4 + 9)) - 12 / 4",
    ];
    let vectors: Vec<_> = queries.iter().map(|q| embedder.embed(q)).collect::<Result<_, _>>()?;
    for (i, a) in queries.iter().enumerate() {
        for (j, b) in queries.iter().enumerate().skip(i + 1) {
            println!("cos({a:?}, {b:?}) = {:.3}", cosine(&vectors[i], &vectors[j])?);
        }
    }

    let catalog = OperatorCatalog::builtin(&embedder)?;
    let pool = ModelPool::builtin(&embedder)?;
    println!("\noperators vs {:?}", queries[2]);
    for i in 0..catalog.len() {
        let op = catalog.get(i);
        println!("  {:<16} {:+.3}", op.name, cosine(&vectors[2], &op.embedding)?);
    }
    println!("models vs {:?}", queries[2]);
    for card in pool.cards() {
        println!("  {:<16} {:+.3}", card.name, cosine(&vectors[2], card.embedding.as_ref().expect("embedded card"))?);
    }
    Ok(())
}

"""Enumerate a GDB/QM9-style corpus of small neutral C/N/O/F molecules.

QM9 itself cannot be redistributed here, so the test corpus is produced by
exhaustive enumeration for small sizes and random growth for larger ones,
using RDKit for sanitization and SMILES output.

    python3 tools/gen_corpus.py --out crates/core/tests/data
"""
import argparse
import random

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")

VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
ORDERS = {1: Chem.BondType.SINGLE, 2: Chem.BondType.DOUBLE, 3: Chem.BondType.TRIPLE}


def acceptable(mol):
    for bond in mol.GetBonds():
        a, b = bond.GetBeginAtom().GetSymbol(), bond.GetEndAtom().GetSymbol()
        pair = {a, b}
        if "F" in pair and pair != {"C", "F"}:
            return False
        if pair == {"O"}:
            return False
        if bond.IsInRing() and bond.GetBondType() == Chem.BondType.TRIPLE:
            return False
    for atom in mol.GetAtoms():
        doubles = sum(1 for b in atom.GetBonds() if b.GetBondType() == Chem.BondType.DOUBLE)
        if doubles > 1:
            return False
    ri = mol.GetRingInfo()
    if any(len(r) > 7 for r in ri.AtomRings()):
        return False
    return True


def grow(smiles):
    """All single-edit extensions: add an atom or close a ring."""
    mol = Chem.MolFromSmiles(smiles)
    Chem.Kekulize(mol, clearAromaticFlags=True)
    out = set()
    n = mol.GetNumAtoms()
    free = [a.GetTotalNumHs() for a in mol.GetAtoms()]
    for i in range(n):
        for el, val in VALENCE.items():
            for order in (1, 2, 3):
                if order > free[i] or order > val:
                    continue
                rw = Chem.RWMol(mol)
                j = rw.AddAtom(Chem.Atom(el))
                rw.AddBond(i, j, ORDERS[order])
                out.add(rw)
    for i in range(n):
        for j in range(i + 1, n):
            if mol.GetBondBetweenAtoms(i, j) is not None:
                continue
            for order in (1, 2):
                if order > free[i] or order > free[j]:
                    continue
                rw = Chem.RWMol(mol)
                rw.AddBond(i, j, ORDERS[order])
                out.add(rw)
    result = set()
    for rw in out:
        m = rw.GetMol()
        for a in m.GetAtoms():
            a.SetNoImplicit(False)
            a.SetNumExplicitHs(0)
        try:
            Chem.SanitizeMol(m)
        except Exception:
            continue
        if acceptable(m):
            result.add(Chem.MolToSmiles(m))
    return result


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--exhaustive", type=int, default=5)
    ap.add_argument("--max-atoms", type=int, default=9)
    ap.add_argument("--sample", type=int, default=2500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)

    layers = [{"C", "N", "O"}]
    for _ in range(args.exhaustive - 1):
        nxt = set()
        for s in sorted(layers[-1]):
            nxt |= grow(s)
        layers.append(nxt)
    small = sorted(set().union(*layers), key=lambda s: (Chem.MolFromSmiles(s).GetNumAtoms(), s))
    # F-only layers come in through growth; add HF-free singletons only.

    large = set()
    seeds = sorted(layers[-1])
    while len(large) < args.sample:
        s = rng.choice(seeds)
        target = rng.randint(args.exhaustive + 1, args.max_atoms)
        while Chem.MolFromSmiles(s).GetNumAtoms() < target:
            options = sorted(grow(s))
            if not options:
                break
            s = rng.choice(options)
        if Chem.MolFromSmiles(s).GetNumAtoms() > args.exhaustive:
            large.add(s)
    large = sorted(large)

    with open(f"{args.out}/small_molecules.csv", "w") as f:
        f.write("id,smiles\n")
        for k, s in enumerate(small):
            f.write(f"s{k:05d},{s}\n")
    with open(f"{args.out}/corpus.csv", "w") as f:
        f.write("id,smiles\n")
        allm = small + large
        for k, s in enumerate(allm):
            f.write(f"m{k:05d},{s}\n")
    # Alternative (non-canonical) spellings of the same molecules.
    with open(f"{args.out}/corpus_random_smiles.csv", "w") as f:
        f.write("id,smiles,random_smiles\n")
        for k, s in enumerate(small + large):
            m = Chem.MolFromSmiles(s)
            r = Chem.MolToSmiles(m, doRandom=True, canonical=False)
            if k % 3 == 0:
                Chem.Kekulize(m, clearAromaticFlags=True)
                r = Chem.MolToSmiles(m, kekuleSmiles=True, doRandom=True, canonical=False)
            f.write(f"m{k:05d},{s},{r}\n")
    print(len(small), "small;", len(large), "large;", [len(l) for l in layers])


if __name__ == "__main__":
    main()

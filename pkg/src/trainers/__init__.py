"""
Training algorithms, one BaseTrainer subclass per method
"""
